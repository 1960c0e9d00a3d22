//! Layered trace rewriting: each layer is a monitor in rewrite mode whose
//! forwarded calls feed the next layer, abstracting library calling
//! conventions (create/update/finalize sequences, verbose names) into
//! single protocol-level events.
//!
//! A layer must forward every call that should survive it: events that
//! match no rule of the layer are rejected, which is what lets a layer
//! flag incorrect library usage such as a Write without a prior New.

use std::fmt;

use thiserror::Error;

use crate::decompose::{decompose_for_rewrite, DecomposeError};
use crate::engine::{EngineError, MonitorState, Rejection, RunMode, TraceEvent};
use crate::event::ProgramEvent;
use crate::formats::FormatRegistry;
use crate::spec::{elaborate, ExtendedRule, Mode, SpecError, SpecFile};

/// One rewriting stage: a monitor restricted to a single configuration
/// whose forwarded calls become the next stage's input.
#[derive(Debug)]
pub struct RewriteLayer {
    name: String,
    monitor: MonitorState,
}

/// Result of feeding one event to a layer.
pub enum LayerOutcome {
    /// The calls the layer forwards downstream, in emission order.
    Forwarded(Vec<ProgramEvent>),
    /// The layer rejected the event (incorrect library usage).
    Rejected(Rejection),
}

impl RewriteLayer {
    /// Builds a layer from already decomposed rules.
    pub fn new(
        name: impl Into<String>,
        rules: Vec<ExtendedRule>,
        formats: FormatRegistry,
    ) -> RewriteLayer {
        RewriteLayer {
            name: name.into(),
            monitor: MonitorState::new(rules, formats, RunMode::Rewrite),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn monitor(&self) -> &MonitorState {
        &self.monitor
    }

    /// Processes one event and returns the calls to forward. Plain action
    /// facts on the output trace are dropped here; they have no call
    /// shape. Rules emit calls via `Emit(...)` actions.
    pub fn step(&mut self, event: &ProgramEvent) -> Result<LayerOutcome, EngineError> {
        if let Some(rejection) = self.monitor.process_event(event)? {
            return Ok(LayerOutcome::Rejected(rejection));
        }
        let forwarded = self
            .monitor
            .drain_output()?
            .into_iter()
            .filter_map(|entry| match entry {
                TraceEvent::Call(call) => Some(call),
                TraceEvent::Fact(_) => None,
            })
            .collect();
        Ok(LayerOutcome::Forwarded(forwarded))
    }
}

/// Builds a layer from a parsed spec file: the file must carry the
/// `mode: rewrite` marker. Returns the layer plus spec-quality lints.
pub fn layer_from_spec(spec: &SpecFile, name: &str) -> Result<(RewriteLayer, Vec<String>), LayerError> {
    if spec.mode != Some(Mode::Rewrite) {
        return Err(LayerError::NotARewriteSpec { name: name.to_string() });
    }
    let elaborated = elaborate(spec);
    for (rule, errors) in &elaborated.rule_errors {
        return Err(LayerError::Spec(SpecError::Rule {
            rule: rule.clone(),
            msg: errors.join("; "),
        }));
    }
    let mut lints = elaborated.warnings.clone();
    for rule in &elaborated.rules {
        if !rule.events.is_empty() {
            lints.push(format!(
                "rule {}: plain action facts do not appear in the rewritten \
                 stream; use Emit to forward a call",
                rule.name
            ));
        }
        if !rule.hints.is_empty() {
            lints.push(format!(
                "rule {}: lookahead hints in a rewrite layer are unusual",
                rule.name
            ));
        }
    }
    let rules = decompose_for_rewrite(&elaborated.rules)?;
    Ok((RewriteLayer::new(name, rules, spec.formats.clone()), lints))
}

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("{name} is not a rewrite layer: add `mode: rewrite` to the spec")]
    NotARewriteSpec { name: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
}

/// Where in a pipeline something happened: a layer (by position and
/// name) or the final monitor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Layer { position: usize, name: String },
    Sink,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Layer { position, name } => write!(f, "layer {position} ({name})"),
            Stage::Sink => write!(f, "monitor"),
        }
    }
}

/// A rejection annotated with the stage that produced it and the index
/// of the input-stream event being processed when it happened.
#[derive(Debug)]
pub struct PipelineRejection {
    pub stage: Stage,
    pub input_index: usize,
    pub rejection: Rejection,
}

impl fmt::Display for PipelineRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rejected input event #{}\n{}",
            self.stage, self.input_index, self.rejection
        )
    }
}

/// An engine failure annotated with its stage.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: EngineError,
}

/// An ordered sequence of rewrite layers feeding a final monitor.
#[derive(Debug)]
pub struct Pipeline {
    layers: Vec<RewriteLayer>,
    sink: MonitorState,
    input_events: usize,
}

impl Pipeline {
    pub fn new(layers: Vec<RewriteLayer>, sink: MonitorState) -> Pipeline {
        Pipeline { layers, sink, input_events: 0 }
    }

    pub fn sink(&self) -> &MonitorState {
        &self.sink
    }

    pub fn layers(&self) -> &[RewriteLayer] {
        &self.layers
    }

    /// Collects pending per-stage diagnostics, prefixed by stage.
    pub fn take_diagnostics(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let stage = Stage::Layer { position: i, name: layer.name.clone() };
            for d in layer.monitor.take_diagnostics() {
                out.push(format!("{stage}: {d}"));
            }
        }
        for d in self.sink.take_diagnostics() {
            out.push(format!("{}: {d}", Stage::Sink));
        }
        out
    }

    /// Feeds one input event through every layer in order and the
    /// surviving rewritten events into the final monitor.
    pub fn process_event(
        &mut self,
        event: &ProgramEvent,
    ) -> Result<Option<PipelineRejection>, PipelineError> {
        let input_index = self.input_events;
        self.input_events += 1;
        let mut batch = vec![event.clone()];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let name = layer.name.clone();
            let mut next = Vec::new();
            for ev in &batch {
                let stage = Stage::Layer { position: i, name: name.clone() };
                match layer.step(ev).map_err(|source| PipelineError {
                    stage: Stage::Layer { position: i, name: name.clone() },
                    source,
                })? {
                    LayerOutcome::Forwarded(mut calls) => next.append(&mut calls),
                    LayerOutcome::Rejected(rejection) => {
                        return Ok(Some(PipelineRejection { stage, input_index, rejection }))
                    }
                }
            }
            batch = next;
        }
        for ev in &batch {
            let verdict = self
                .sink
                .process_event(ev)
                .map_err(|source| PipelineError { stage: Stage::Sink, source })?;
            if let Some(rejection) = verdict {
                return Ok(Some(PipelineRejection { stage: Stage::Sink, input_index, rejection }));
            }
        }
        Ok(None)
    }

    /// Folds `process_event` over a trace, stopping at the first verdict.
    pub fn process_trace(
        &mut self,
        events: &[ProgramEvent],
    ) -> Result<Option<PipelineRejection>, PipelineError> {
        for event in events {
            if let Some(rejection) = self.process_event(event)? {
                return Ok(Some(rejection));
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::split_ruleset;
    use crate::spec::parse_spec;
    use std::collections::BTreeSet;

    const BLAKE2S: &str = r#"
        theory Blake2s begin

        mode: rewrite

        rule New256:
            [ ] --[ Trig('New256', <>, d) ]-> [ New(d) ]

        rule WriteFirst:
            [ New(d) ] --[ Trig('Write', <d, x>, '') ]-> [ S(d, x) ]

        rule WriteNext:
            [ S(d, x) ] --[ Trig('Write', <d, y>, '') ]-> [ S(d, cat(x, y)) ]

        rule Sum:
            [ S(d, x) ] --[ Trig('Sum', <d>, hx), Emit('h', <x>, hx) ]-> [ ]

        rule Reset:
            [ S(d, x) ] --[ Trig('Reset', <d>, '') ]-> [ New(d) ]

        end
    "#;

    fn layer(source: &str) -> RewriteLayer {
        let spec = parse_spec(source, &BTreeSet::new()).expect("layer spec parses");
        let (layer, lints) = layer_from_spec(&spec, "test-layer").expect("layer loads");
        assert!(lints.is_empty(), "unexpected lints: {lints:?}");
        layer
    }

    fn call(name: &str, args: Vec<Vec<u8>>, ret: Vec<u8>) -> ProgramEvent {
        ProgramEvent::new(name, args, ret)
    }

    fn forwarded(layer: &mut RewriteLayer, event: &ProgramEvent) -> Vec<ProgramEvent> {
        match layer.step(event).expect("no engine error") {
            LayerOutcome::Forwarded(calls) => calls,
            LayerOutcome::Rejected(r) => panic!("unexpected rejection: {r}"),
        }
    }

    fn rejected(layer: &mut RewriteLayer, event: &ProgramEvent) -> Rejection {
        match layer.step(event).expect("no engine error") {
            LayerOutcome::Forwarded(calls) => panic!("unexpectedly forwarded {calls:?}"),
            LayerOutcome::Rejected(r) => r,
        }
    }

    #[test]
    fn streamed_writes_emit_one_hash_call() {
        let mut layer = layer(BLAKE2S);
        let d = vec![0xd1];
        assert!(forwarded(&mut layer, &call("New256", vec![], d.clone())).is_empty());
        assert!(forwarded(&mut layer, &call("Write", vec![d.clone(), vec![0xAA]], vec![])).is_empty());
        assert!(forwarded(&mut layer, &call("Write", vec![d.clone(), vec![0xBB]], vec![])).is_empty());
        let out = forwarded(&mut layer, &call("Sum", vec![d], vec![0x99]));
        assert_eq!(out, vec![call("h", vec![vec![0xAA, 0xBB]], vec![0x99])]);
    }

    #[test]
    fn write_without_new_is_rejected() {
        let mut layer = layer(BLAKE2S);
        let rejection = rejected(&mut layer, &call("Write", vec![vec![0xd1], vec![0xAA]], vec![]));
        assert_eq!(rejection.index, 0);
    }

    #[test]
    fn reset_before_new_is_rejected() {
        let mut layer = layer(BLAKE2S);
        let rejection = rejected(&mut layer, &call("Reset", vec![vec![0xd1]], vec![]));
        assert_eq!(rejection.index, 0);
    }

    #[test]
    fn reset_discards_prior_input() {
        let mut layer = layer(BLAKE2S);
        let d = vec![0xd1];
        forwarded(&mut layer, &call("New256", vec![], d.clone()));
        forwarded(&mut layer, &call("Write", vec![d.clone(), vec![0xAA]], vec![]));
        forwarded(&mut layer, &call("Reset", vec![d.clone()], vec![]));
        forwarded(&mut layer, &call("Write", vec![d.clone(), vec![0xBB]], vec![]));
        let out = forwarded(&mut layer, &call("Sum", vec![d], vec![0x98]));
        assert_eq!(out, vec![call("h", vec![vec![0xBB]], vec![0x98])]);
    }

    #[test]
    fn interleaved_digest_objects_accumulate_independently() {
        let mut layer = layer(BLAKE2S);
        let d1 = vec![0xd1];
        let d2 = vec![0xd2];
        forwarded(&mut layer, &call("New256", vec![], d1.clone()));
        forwarded(&mut layer, &call("New256", vec![], d2.clone()));
        forwarded(&mut layer, &call("Write", vec![d1.clone(), vec![0x01]], vec![]));
        forwarded(&mut layer, &call("Write", vec![d2.clone(), vec![0x02]], vec![]));
        forwarded(&mut layer, &call("Write", vec![d1.clone(), vec![0x11]], vec![]));
        let first = forwarded(&mut layer, &call("Sum", vec![d1], vec![0xa1]));
        assert_eq!(first, vec![call("h", vec![vec![0x01, 0x11]], vec![0xa1])]);
        let second = forwarded(&mut layer, &call("Sum", vec![d2], vec![0xa2]));
        assert_eq!(second, vec![call("h", vec![vec![0x02]], vec![0xa2])]);
    }

    #[test]
    fn long_accumulation_matches_concatenation() {
        let mut layer = layer(BLAKE2S);
        let d = vec![0xd1];
        forwarded(&mut layer, &call("New256", vec![], d.clone()));
        let mut expected = Vec::new();
        for i in 0..64u8 {
            let chunk = vec![i, i.wrapping_mul(3)];
            expected.extend_from_slice(&chunk);
            forwarded(&mut layer, &call("Write", vec![d.clone(), chunk], vec![]));
        }
        let out = forwarded(&mut layer, &call("Sum", vec![d], vec![0x42]));
        assert_eq!(out, vec![call("h", vec![expected], vec![0x42])]);
    }

    #[test]
    fn verbose_names_are_renamed_one_for_one() {
        let source = r#"
            theory Rename begin
            mode: rewrite
            rule Rename:
                [ ] --[ Trig('blake2sSum256', <x>, hx), Emit('h', <x>, hx) ]-> [ ]
            end
        "#;
        let mut layer = layer(source);
        let out = forwarded(&mut layer, &call("blake2sSum256", vec![vec![0x01]], vec![0x02]));
        assert_eq!(out, vec![call("h", vec![vec![0x01]], vec![0x02])]);
    }

    #[test]
    fn drop_rules_swallow_irrelevant_calls() {
        let source = r#"
            theory Drop begin
            mode: rewrite
            rule DropKdf:
                [ ] --[ Trig('KDF', <x>, y) ]-> [ ]
            rule FwdHash:
                [ ] --[ Trig('h', <x>, y), Emit('h', <x>, y) ]-> [ ]
            end
        "#;
        let mut layer = layer(source);
        assert!(forwarded(&mut layer, &call("KDF", vec![vec![0x01]], vec![0x02])).is_empty());
        let out = forwarded(&mut layer, &call("h", vec![vec![0x03]], vec![0x04]));
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn an_all_forwarding_layer_is_an_identity() {
        let source = r#"
            theory Ident begin
            mode: rewrite
            rule Fwd:
                [ ] --[ Trig('f', <x>, y), Emit('f', <x>, y) ]-> [ ]
            end
        "#;
        let mut layer = layer(source);
        let events = [
            call("f", vec![vec![0x01]], vec![0x02]),
            call("f", vec![vec![0x03]], vec![]),
            call("f", vec![vec![]], vec![0x05]),
        ];
        for e in &events {
            assert_eq!(forwarded(&mut layer, e), vec![e.clone()]);
        }
    }

    #[test]
    fn loading_requires_the_rewrite_marker() {
        let source = r#"
            theory NotALayer begin
            rule R:
                [ ] --[ Trig('f', <x>, y) ]-> [ ]
            end
        "#;
        let spec = parse_spec(source, &BTreeSet::new()).unwrap();
        let err = layer_from_spec(&spec, "plain.spthy").unwrap_err();
        assert!(matches!(err, LayerError::NotARewriteSpec { .. }));
    }

    #[test]
    fn plain_action_facts_are_linted_and_dropped() {
        let source = r#"
            theory Facty begin
            mode: rewrite
            rule R:
                [ ] --[ Trig('f', <x>, y), Logged(x) ]-> [ ]
            end
        "#;
        let spec = parse_spec(source, &BTreeSet::new()).unwrap();
        let (mut layer, lints) = layer_from_spec(&spec, "facty").unwrap();
        assert!(lints.iter().any(|l| l.contains("plain action facts")));
        let out = forwarded(&mut layer, &call("f", vec![vec![0x01]], vec![0x02]));
        assert!(out.is_empty());
    }

    fn sink(source: &str) -> MonitorState {
        let spec = parse_spec(source, &BTreeSet::new()).expect("sink spec parses");
        let elaborated = elaborate(&spec);
        assert!(elaborated.rule_errors.is_empty(), "{:?}", elaborated.rule_errors);
        let rules = split_ruleset(&elaborated.rules).expect("decomposes");
        MonitorState::new(rules, spec.formats, RunMode::Monitor)
    }

    const HASH_SINK: &str = r#"
        theory HashUser begin
        functions: h/1
        rule Init:
            [ ] --[ Trig('init', <x>, r) ]-> [ S0(x) ]
        rule Digest:
            [ S0(x) ] --[ Hashed(x) ]-> [ S1(h(x)) ]
        end
    "#;

    #[test]
    fn an_empty_pipeline_feeds_the_sink_directly() {
        let mut pipeline = Pipeline::new(Vec::new(), sink(HASH_SINK));
        assert!(pipeline.process_event(&call("init", vec![vec![0x1]], vec![])).unwrap().is_none());
        assert!(pipeline.process_event(&call("h", vec![vec![0x1]], vec![0x2])).unwrap().is_none());
        assert_eq!(pipeline.sink().config_count(), 1);
    }

    #[test]
    fn a_layer_abstracts_streaming_hash_calls_for_the_sink() {
        // The sink expects single h calls; the implementation uses the
        // streaming convention. The layer bridges the two, forwarding the
        // init call explicitly.
        let bridging = r#"
            theory Bridge begin

            mode: rewrite

            rule FwdInit:
                [ ] --[ Trig('init', <x>, r), Emit('init', <x>, r) ]-> [ ]

            rule New256:
                [ ] --[ Trig('New256', <>, d) ]-> [ New(d) ]

            rule WriteFirst:
                [ New(d) ] --[ Trig('Write', <d, x>, '') ]-> [ S(d, x) ]

            rule WriteNext:
                [ S(d, x) ] --[ Trig('Write', <d, y>, '') ]-> [ S(d, cat(x, y)) ]

            rule Sum:
                [ S(d, x) ] --[ Trig('Sum', <d>, hx), Emit('h', <x>, hx) ]-> [ ]

            end
        "#;
        let spec = parse_spec(bridging, &BTreeSet::new()).unwrap();
        let (layer, _) = layer_from_spec(&spec, "bridge").unwrap();
        let mut pipeline = Pipeline::new(vec![layer], sink(HASH_SINK));
        let d = vec![0xd1];
        let trace = [
            call("init", vec![vec![0xAA, 0xBB]], vec![]),
            call("New256", vec![], d.clone()),
            call("Write", vec![d.clone(), vec![0xAA]], vec![]),
            call("Write", vec![d.clone(), vec![0xBB]], vec![]),
            call("Sum", vec![d], vec![0x77]),
        ];
        assert!(pipeline.process_trace(&trace).unwrap().is_none());
        let facts: Vec<String> = pipeline
            .sink()
            .configurations()
            .flat_map(|c| c.state.iter_all().map(|f| f.to_string()))
            .collect();
        assert_eq!(facts, vec!["S1(0x77)"]);
    }

    #[test]
    fn layer_rejections_carry_stage_and_input_index() {
        let spec = parse_spec(BLAKE2S, &BTreeSet::new()).unwrap();
        let (layer, _) = layer_from_spec(&spec, "blake2s").unwrap();
        let mut pipeline = Pipeline::new(vec![layer], sink(HASH_SINK));
        let d = vec![0xd1];
        assert!(pipeline.process_event(&call("New256", vec![], d.clone())).unwrap().is_none());
        let rejection = pipeline
            .process_event(&call("Reset", vec![d], vec![]))
            .unwrap()
            .expect("reset before any write is rejected");
        assert_eq!(rejection.input_index, 1);
        assert!(matches!(rejection.stage, Stage::Layer { position: 0, .. }));
        let report = rejection.to_string();
        assert!(report.contains("layer 0 (blake2s)"));
    }

    #[test]
    fn sink_rejections_report_the_monitor_stage() {
        let mut pipeline = Pipeline::new(Vec::new(), sink(HASH_SINK));
        let rejection = pipeline
            .process_event(&call("nonsense", vec![], vec![]))
            .unwrap()
            .expect("unknown event is rejected");
        assert_eq!(rejection.stage, Stage::Sink);
        assert_eq!(rejection.input_index, 0);
    }
}
