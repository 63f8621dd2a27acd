//! Plan execution: root invocations, protected child invocations, the final
//! join and identifier removal.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;
use std::thread;

use crate::audit::{InvocationTranscript, TranscriptHeader};
use crate::error::{Error, Result};
use crate::opes::EncryptedId;
use crate::service::{InProcTransport, MessageKind, ProtocolMessage, Service, Transport, Tuple};
use crate::store::{Attrs, IdRange};

use super::generalize::{invoke_protected, invoke_range, GenCache};
use super::plan::{CompositionPlan, InputBinding};
use super::session::{Endpoint, Metrics, Session};

#[derive(Clone)]
pub struct ServiceHandle {
    pub service: Arc<Service>,
    pub transport: Arc<dyn Transport>,
}

impl ServiceHandle {
    pub fn in_proc(service: Arc<Service>) -> Self {
        ServiceHandle {
            transport: Arc::new(InProcTransport::new(service.clone())),
            service,
        }
    }
}

/// Service handles by service name.
pub type Services = BTreeMap<String, ServiceHandle>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Protected,
    /// Every child is invoked with the exact identifier. Reference point for
    /// overhead measurements; offers no protection.
    Unprotected,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Protected => "protected",
            Mode::Unprotected => "unprotected",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExecOptions {
    pub mode: Mode,
    /// Overrides the plan's `alpha`.
    pub alpha: Option<usize>,
    /// Overrides the plan's `consent`.
    pub consent: Option<bool>,
    pub cache: bool,
    /// Run independent nodes of the same depth on separate threads.
    pub parallel: bool,
    pub record: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            mode: Mode::Protected,
            alpha: None,
            consent: None,
            cache: false,
            parallel: false,
            record: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResultTable {
    /// `node.attr` names, sorted.
    pub columns: Vec<String>,
    /// Sorted by content.
    pub rows: Vec<BTreeMap<String, String>>,
}

impl ResultTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(self.columns.iter().map(|c| row.get(c).map_or("", String::as_str)))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct Execution {
    pub table: ResultTable,
    pub transcript: InvocationTranscript,
    pub metrics: Metrics,
}

type NodeOutput = BTreeMap<EncryptedId, Attrs>;

struct Ctx<'a> {
    plan: &'a CompositionPlan,
    services: &'a Services,
    session: &'a Session,
    opts: &'a ExecOptions,
    alpha: usize,
    consent: bool,
    bindings: BTreeMap<&'a str, (String, String)>,
}

pub fn execute_plan(
    plan: &CompositionPlan,
    services: &Services,
    user_inputs: &BTreeMap<String, String>,
    opts: &ExecOptions,
) -> Result<Execution> {
    let alpha = opts.alpha.unwrap_or(plan.alpha);
    if alpha == 0 {
        return Err(Error::Invalid("alpha must be at least 1".into()));
    }
    let consent = opts.consent.unwrap_or(plan.consent);
    let mut bindings = BTreeMap::new();
    let mut versions = BTreeMap::new();
    for n in plan.nodes() {
        let h = services
            .get(&n.service)
            .ok_or_else(|| Error::Plan(format!("node {} names unknown service `{}`", n.id, n.service)))?;
        versions.insert(n.service.clone(), h.service.version());
        if let InputBinding::Const { attr, value } = &n.input {
            let v = user_inputs
                .get(&n.id)
                .or(value.as_ref())
                .ok_or_else(|| Error::MissingBinding(n.id.clone()))?;
            bindings.insert(n.id.as_str(), (attr.clone(), v.clone()));
        }
    }
    let header = TranscriptHeader::for_plan(plan, opts.mode.as_str(), alpha, versions);
    let mut session = Session::new(header);
    if !opts.record {
        session = session.without_recording();
    }
    let ctx = Ctx {
        plan,
        services,
        session: &session,
        opts,
        alpha,
        consent,
        bindings,
    };
    let mut outputs: BTreeMap<String, NodeOutput> = BTreeMap::new();
    for level in plan.levels() {
        let results: Vec<(String, Result<NodeOutput>)> = if opts.parallel && level.len() > 1 {
            thread::scope(|s| {
                let handles: Vec<_> = level
                    .iter()
                    .map(|&id| {
                        let (ctx, outputs) = (&ctx, &outputs);
                        (id, s.spawn(move || run_node(ctx, id, outputs)))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|(id, h)| (id.to_string(), h.join().expect("node worker panicked")))
                    .collect()
            })
        } else {
            level
                .iter()
                .map(|&id| (id.to_string(), run_node(&ctx, id, &outputs)))
                .collect()
        };
        for (id, res) in results {
            outputs.insert(id, res?);
        }
    }
    let table = join_outputs(plan, services, &outputs);
    let metrics = session.metrics();
    Ok(Execution {
        table,
        transcript: session.into_transcript(),
        metrics,
    })
}

fn run_node(ctx: &Ctx<'_>, id: &str, outputs: &BTreeMap<String, NodeOutput>) -> Result<NodeOutput> {
    let plan = ctx.plan;
    let node = plan.node(id).expect("levels only list plan nodes");
    let handle = &ctx.services[&node.service];
    let label = plan.edge_label(id);
    let ep = ctx
        .session
        .endpoint(handle.transport.as_ref(), &node.service, id, &label);
    let run = || -> Result<NodeOutput> {
        if let Some((attr, value)) = ctx.bindings.get(id) {
            let resp = ep.call(|rid| ProtocolMessage::invoke_filter(rid, attr, value))?;
            if resp.kind != MessageKind::InvokeResp {
                return Err(Error::ProtocolViolation(format!(
                    "expected INVOKE_RESP, got {:?}",
                    resp.kind
                )));
            }
            return Ok(collect(resp.tuples.unwrap_or_default(), |_| true));
        }
        let parents = plan.parents(id);
        let mut inputs: BTreeSet<EncryptedId> = outputs[parents[0]].keys().copied().collect();
        for p in &parents[1..] {
            inputs.retain(|x| outputs[*p].contains_key(x));
        }
        match ctx.opts.mode {
            Mode::Unprotected => {
                let mut out = NodeOutput::new();
                for &x in &inputs {
                    out.extend(collect(invoke_range(&ep, IdRange::point(x))?, |t| t.id == x));
                }
                Ok(out)
            }
            Mode::Protected => {
                let parent_svc = &plan.node(parents[0]).expect("parent in plan").service;
                let parent = &ctx.services[parent_svc];
                let parent_ep = ctx.session.endpoint(parent.transport.as_ref(), parent_svc, id, &label);
                protected_child(ctx, &ep, &parent_ep, plan.effective_k(id)?, &inputs)
            }
        }
    };
    run().map_err(|e| e.on_edge(label.clone()))
}

fn protected_child(
    ctx: &Ctx<'_>,
    ep: &Endpoint<'_>,
    parent: &Endpoint<'_>,
    k: usize,
    inputs: &BTreeSet<EncryptedId>,
) -> Result<NodeOutput> {
    let mut cache = ctx.opts.cache.then(GenCache::default);
    let mut plain = Vec::new();
    let mut consented = Vec::new();
    for &x in inputs {
        if ctx.consent && ask_consent(parent, x)? {
            consented.push(x);
        } else {
            plain.push(x);
        }
    }
    let mut out = NodeOutput::new();
    let mut covered: Vec<IdRange> = Vec::new();
    let mut seen = NodeOutput::new();
    // subjects who did not consent go first, so their ranges are never
    // shaped by precise lookups made for others
    for x in plain {
        let inv = invoke_protected(ep, x, k, ctx.alpha, cache.as_mut())?;
        covered.push(inv.range);
        if ctx.consent {
            seen.extend(collect(inv.returned, |_| true));
        }
        out.extend(collect(inv.tuples, |_| true));
    }
    for x in consented {
        if covered.iter().any(|r| r.contains_id(x)) {
            if let Some(a) = seen.get(&x) {
                out.insert(x, a.clone());
            }
            continue;
        }
        ctx.session.note_precise();
        out.extend(collect(invoke_range(ep, IdRange::point(x))?, |t| t.id == x));
    }
    Ok(out)
}

fn ask_consent(ep: &Endpoint<'_>, x: EncryptedId) -> Result<bool> {
    let resp = ep.call(|id| ProtocolMessage::consent(id, x))?;
    match (resp.kind, resp.consented) {
        (MessageKind::ConsentResp, Some(c)) => Ok(c),
        _ => Err(Error::ProtocolViolation("malformed consent reply".into())),
    }
}

fn collect(tuples: Vec<Tuple>, keep: impl Fn(&Tuple) -> bool) -> NodeOutput {
    tuples.into_iter().filter(keep).map(|t| (t.id, t.attrs)).collect()
}

// Inner join of every node's output on the identifier, in node-id order.
fn join_outputs(plan: &CompositionPlan, services: &Services, outputs: &BTreeMap<String, NodeOutput>) -> ResultTable {
    let mut ids: Option<BTreeSet<EncryptedId>> = None;
    for out in outputs.values() {
        ids = Some(match ids {
            None => out.keys().copied().collect(),
            Some(mut s) => {
                s.retain(|x| out.contains_key(x));
                s
            }
        });
    }
    let mut columns = BTreeSet::new();
    let mut rows = Vec::new();
    for x in ids.unwrap_or_default() {
        let mut row = BTreeMap::new();
        for (node, out) in outputs {
            let id_attr = &services[&plan.node(node).expect("plan node").service]
                .service
                .config()
                .identifier_attr;
            for (a, v) in &out[&x] {
                if a != id_attr {
                    let col = format!("{node}.{a}");
                    columns.insert(col.clone());
                    row.insert(col, v.clone());
                }
            }
        }
        rows.push(row);
    }
    rows.sort();
    ResultTable {
        columns: columns.into_iter().collect(),
        rows,
    }
}
