use serde::{Deserialize, Serialize};

use super::attention::{attention_select, compute_key, scores, AttentionBundle};
use super::ignition::IgnitionParams;
use super::parallel::par_map;
use super::trace::{Phase, TickSummary, Trace, TraceEvent};
use crate::domains::SpecializedModule;
use crate::error::{Error, Result};
use crate::numerics::{norm, Tensor};
use crate::translate::GlwTranslator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub z: Vec<f64>,
    pub copies: Vec<Vec<f64>>,
    pub connected: Vec<bool>,
    pub amplitude: f64,
    pub query: Vec<f64>,
    pub step_count: u64,
    pub seed: u64,
    /// Step at which each copy was last written by broadcast or
    /// reverberation.
    pub copy_step: Vec<Option<u64>>,
    pub broadcasted: bool,
}

impl WorkspaceState {
    pub fn new(t: &GlwTranslator, d_k: usize, seed: u64) -> Self {
        let n = t.n_modules();
        WorkspaceState {
            z: vec![0.0; t.dim],
            copies: t.latent_dims().into_iter().map(|d| vec![0.0; d]).collect(),
            connected: vec![false; n],
            amplitude: 0.0,
            query: vec![0.0; d_k],
            step_count: 0,
            seed,
            copy_step: vec![None; n],
            broadcasted: false,
        }
    }

    pub fn n_modules(&self) -> usize {
        self.copies.len()
    }

    pub fn connected_ids(&self) -> Vec<usize> {
        (0..self.connected.len()).filter(|&i| self.connected[i]).collect()
    }

    fn check_module(&self, m: usize) -> Result<()> {
        if m >= self.n_modules() {
            return Err(Error::UnknownModule(m));
        }
        Ok(())
    }
}

/// Stimulus arriving at one module during a tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub module: usize,
    pub latent: Vec<f64>,
    pub salience: f64,
    pub u: f64,
}

fn row(v: &[f64]) -> Result<Tensor> {
    Tensor::matrix(1, v.len(), v.to_vec())
}

/// Re-derives keys and saliences for a tick: modules with events use the
/// event latent (last event wins) and its salience; connected modules
/// without events compete with their internal copy at zero salience; all
/// others have no key.
pub fn refresh_keys(
    state: &WorkspaceState,
    events: &[Event],
    t: &GlwTranslator,
    bundle: &mut AttentionBundle,
) -> Result<()> {
    if bundle.n_modules() != state.n_modules() {
        return Err(Error::dim("refresh_keys", &[bundle.n_modules()], &[state.n_modules()]));
    }
    let mut latest: Vec<Option<&Event>> = vec![None; state.n_modules()];
    for e in events {
        state.check_module(e.module)?;
        latest[e.module] = Some(e);
    }
    for m in 0..state.n_modules() {
        match latest[m] {
            Some(e) => {
                bundle.keys[m] = Some(compute_key(m, &e.latent, t, &bundle.projections[m])?);
                bundle.salience[m] = e.salience;
            }
            None if state.connected[m] => {
                bundle.keys[m] = Some(compute_key(m, &state.copies[m], t, &bundle.projections[m])?);
                bundle.salience[m] = 0.0;
            }
            None => {
                bundle.keys[m] = None;
                bundle.salience[m] = 0.0;
            }
        }
    }
    Ok(())
}

/// Runs attention against the current query and replaces the connected set.
pub fn select(state: &mut WorkspaceState, bundle: &AttentionBundle, trace: &mut Trace) -> Result<Vec<usize>> {
    let chosen = attention_select(&state.query, bundle)?;
    state.connected.iter_mut().for_each(|c| *c = false);
    for &m in &chosen {
        state.check_module(m)?;
        state.connected[m] = true;
    }
    let mut e = TraceEvent::new(state.step_count, Phase::Select);
    e.scores = Some(scores(&state.query, bundle)?);
    e.connected = Some(chosen.clone());
    trace.push(e);
    Ok(chosen)
}

/// Copies `v` into the module's internal copy when connected; otherwise only
/// records the event. Returns whether the copy was written.
pub fn inject(state: &mut WorkspaceState, module: usize, v: &[f64], trace: &mut Trace) -> Result<bool> {
    state.check_module(module)?;
    if v.len() != state.copies[module].len() {
        return Err(Error::dim("inject", &[v.len()], &[state.copies[module].len()]));
    }
    let e = TraceEvent::new(state.step_count, Phase::Inject).module(module);
    if !state.connected[module] {
        trace.push(e.note("disconnected"));
        return Ok(false);
    }
    state.copies[module] = v.to_vec();
    trace.push(e);
    Ok(true)
}

/// Mean of the connected modules' encodings, summed in ascending module order.
fn consensus(
    t: &GlwTranslator,
    connected: &[usize],
    inputs: &[Vec<f64>],
    threads: usize,
) -> Result<Vec<f64>> {
    let codes = par_map(connected.len(), threads, |k| {
        Ok(t.encode_to_glw(connected[k], &row(&inputs[k])?)?.into_data())
    })?;
    let mut z = vec![0.0; t.dim];
    for c in &codes {
        for (a, b) in z.iter_mut().zip(c) {
            *a += b;
        }
    }
    let n = connected.len() as f64;
    z.iter_mut().for_each(|a| *a /= n);
    Ok(z)
}

fn decode_all(t: &GlwTranslator, z: &[f64], threads: usize) -> Result<Vec<Vec<f64>>> {
    let zr = row(z)?;
    par_map(t.n_modules(), threads, |j| Ok(t.decode_from_glw(j, &zr)?.into_data()))
}

fn check_translator(state: &WorkspaceState, t: &GlwTranslator) -> Result<()> {
    if t.n_modules() != state.n_modules() || t.dim != state.z.len() {
        return Err(Error::dim(
            "workspace",
            &[state.n_modules(), state.z.len()],
            &[t.n_modules(), t.dim],
        ));
    }
    Ok(())
}

/// `z ← mean of connected encodings`, then every copy (connected or not)
/// `← decode(z)`. No connected module: no-op with a trace note.
pub fn broadcast(state: &mut WorkspaceState, t: &GlwTranslator, threads: usize, trace: &mut Trace) -> Result<()> {
    check_translator(state, t)?;
    let connected = state.connected_ids();
    let mut e = TraceEvent::new(state.step_count, Phase::Broadcast);
    if connected.is_empty() {
        trace.push(e.note("no connected modules"));
        return Ok(());
    }
    let inputs: Vec<Vec<f64>> = connected.iter().map(|&m| state.copies[m].clone()).collect();
    let z = consensus(t, &connected, &inputs, threads)?;
    let copies = decode_all(t, &z, threads)?;
    if !z.iter().chain(copies.iter().flatten()).all(|v| v.is_finite()) {
        trace.push(e.note("non-finite state"));
        return Err(Error::NonFinite { op: "broadcast" });
    }
    let dz: Vec<f64> = z.iter().zip(&state.z).map(|(a, b)| a - b).collect();
    e.dz_norm = Some(norm(&dz));
    e.connected = Some(connected);
    state.z = z;
    state.copies = copies;
    state.copy_step = vec![Some(state.step_count); state.n_modules()];
    state.broadcasted = true;
    trace.push(e);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgnitionOutcome {
    pub iterations: usize,
    pub amplitude: f64,
    pub dz_norm: f64,
    pub ignited: bool,
    pub converged: bool,
}

/// Content loop `z ← (1−λ)z + λ·mean_j enc_j(dec_j(z))` over connected `j`,
/// run alongside the amplitude gate `a ← σ(g·a + β·u − θ_a)` until both
/// settle below `tol` or `t_max` steps pass. Copies are refreshed from the
/// final `z`.
pub fn reverberate(
    state: &mut WorkspaceState,
    t: &GlwTranslator,
    p: &IgnitionParams,
    u: f64,
    threads: usize,
    trace: &mut Trace,
) -> Result<IgnitionOutcome> {
    p.validate()?;
    check_translator(state, t)?;
    if !state.broadcasted {
        return Err(Error::Contract("reverberate requires a prior broadcast".into()));
    }
    let connected = state.connected_ids();
    if connected.is_empty() {
        return Err(Error::Contract("reverberate requires a connected module".into()));
    }
    let step = state.step_count;
    let mut z = state.z.clone();
    let mut a = state.amplitude;
    let mut dz_norm = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=p.t_max {
        let zr = row(&z)?;
        let back = par_map(connected.len(), threads, |k| {
            Ok(t.decode_from_glw(connected[k], &zr)?.into_data())
        })?;
        let pulled = consensus(t, &connected, &back, threads)?;
        let next: Vec<f64> = z
            .iter()
            .zip(&pulled)
            .map(|(zi, ei)| (1.0 - p.lambda) * zi + p.lambda * ei)
            .collect();
        let next_a = p.amplitude_step(a, u);
        let dz: Vec<f64> = next.iter().zip(&z).map(|(x, y)| x - y).collect();
        dz_norm = norm(&dz);
        let da = (next_a - a).abs();
        z = next;
        a = next_a;
        iterations = it;
        let mut e = TraceEvent::new(step, Phase::Reverberate);
        e.iteration = Some(it);
        e.amplitude = Some(a);
        e.dz_norm = Some(dz_norm);
        if !dz_norm.is_finite() || !a.is_finite() {
            trace.push(e.note("non-finite state"));
            return Err(Error::NonFinite { op: "reverberate" });
        }
        trace.push(e);
        if dz_norm < p.tol && da < p.tol {
            converged = true;
            break;
        }
    }
    state.copies = decode_all(t, &z, threads)?;
    state.copy_step = vec![Some(step); state.n_modules()];
    state.z = z;
    state.amplitude = a;
    Ok(IgnitionOutcome {
        iterations,
        amplitude: a,
        dz_norm,
        ignited: a >= 0.5,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    pub latent: Vec<f64>,
    pub observation: Option<Vec<f64>>,
}

/// The module's internal copy, and its decoded observation when a module is
/// supplied. Disconnected modules are withheld.
pub fn readout(
    state: &WorkspaceState,
    module: usize,
    modules: Option<&[SpecializedModule]>,
    trace: &mut Trace,
) -> Result<Readout> {
    state.check_module(module)?;
    let e = TraceEvent::new(state.step_count, Phase::Readout).module(module);
    if !state.connected[module] {
        trace.push(e.note("withheld"));
        return Err(Error::Withheld(module));
    }
    let latent = state.copies[module].clone();
    let observation = match modules {
        Some(ms) => {
            let m = ms.get(module).ok_or(Error::UnknownModule(module))?;
            Some(m.decode(&row(&latent)?)?.into_data())
        }
        None => None,
    };
    trace.push(e);
    Ok(Readout { latent, observation })
}

/// Everything a tick needs besides the state.
pub struct TickContext<'a> {
    pub translator: &'a GlwTranslator,
    pub ignition: &'a IgnitionParams,
    pub threads: usize,
}

/// One tick: (0) optional new query, keys and attention; (1) inject every
/// event, broadcast and reverberate with the strongest event input when
/// anything is connected; then the step counter advances.
pub fn tick(
    state: &mut WorkspaceState,
    events: &[Event],
    query: Option<&[f64]>,
    bundle: &mut AttentionBundle,
    ctx: &TickContext<'_>,
    trace: &mut Trace,
) -> Result<TickSummary> {
    if let Some(q) = query {
        if q.len() != bundle.params.d_k {
            return Err(Error::dim("tick query", &[q.len()], &[bundle.params.d_k]));
        }
        state.query = q.to_vec();
    }
    refresh_keys(state, events, ctx.translator, bundle)?;
    select(state, bundle, trace)?;
    for e in events {
        inject(state, e.module, &e.latent, trace)?;
    }
    let mut dz_norm = 0.0;
    if state.connected.iter().any(|&c| c) {
        broadcast(state, ctx.translator, ctx.threads, trace)?;
        let u = events.iter().map(|e| e.u).fold(0.0, f64::max);
        dz_norm = reverberate(state, ctx.translator, ctx.ignition, u, ctx.threads, trace)?.dz_norm;
    }
    let summary = TickSummary {
        step: state.step_count,
        n_connected: state.connected.iter().filter(|&&c| c).count(),
        amplitude: state.amplitude,
        dz_norm,
        ignited: state.amplitude >= 0.5,
    };
    state.step_count += 1;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::attention::AttentionParams;
    use crate::translate::TranslatorMode;

    fn setup(mode: TranslatorMode) -> (GlwTranslator, WorkspaceState, AttentionBundle) {
        let mods = vec![("a".to_string(), 3), ("b".to_string(), 3), ("c".to_string(), 2)];
        let t = GlwTranslator::new(&mods, 4, mode, 7).unwrap();
        let params = AttentionParams { theta_conn: -1e9, c_max: 3, s_master: 0.9, d_k: 4 };
        let b = AttentionBundle::new(params, 3, 4, 1).unwrap();
        let s = WorkspaceState::new(&t, 4, 1);
        (t, s, b)
    }

    fn connect(s: &mut WorkspaceState, ids: &[usize]) {
        for &i in ids {
            s.connected[i] = true;
        }
    }

    #[test]
    fn inject_connected_and_disconnected() {
        let (_, mut s, _) = setup(TranslatorMode::Linear);
        let mut tr = Trace::new();
        connect(&mut s, &[0]);
        assert!(inject(&mut s, 0, &[1.0, 2.0, 3.0], &mut tr).unwrap());
        assert_eq!(s.copies[0], vec![1.0, 2.0, 3.0]);
        let before = s.clone();
        assert!(!inject(&mut s, 1, &[1.0, 2.0, 3.0], &mut tr).unwrap());
        assert_eq!(s, before);
        assert_eq!(tr.len(), 2);
        assert!(inject(&mut s, 0, &[1.0], &mut tr).is_err());
    }

    #[test]
    fn last_injection_wins() {
        let (_, mut s, _) = setup(TranslatorMode::Linear);
        let mut tr = Trace::new();
        connect(&mut s, &[0]);
        inject(&mut s, 0, &[1.0, 1.0, 1.0], &mut tr).unwrap();
        inject(&mut s, 0, &[2.0, 2.0, 2.0], &mut tr).unwrap();
        assert_eq!(s.copies[0], vec![2.0; 3]);
        assert_eq!(tr.len(), 2);
    }

    #[test]
    fn broadcast_matches_matrix_chain() {
        let (t, mut s, _) = setup(TranslatorMode::Mlp);
        connect(&mut s, &[0, 2]);
        s.copies[0] = vec![0.5, -1.0, 0.25];
        s.copies[2] = vec![1.5, 0.3];
        let z0 = t.encode_to_glw(0, &row(&s.copies[0]).unwrap()).unwrap();
        let z2 = t.encode_to_glw(2, &row(&s.copies[2]).unwrap()).unwrap();
        let z = z0.zip_map(&z2, |a, b| (a + b) / 2.0).unwrap();
        let mut tr = Trace::new();
        broadcast(&mut s, &t, 1, &mut tr).unwrap();
        for (a, b) in s.z.iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for j in 0..3 {
            let want = t.decode_from_glw(j, &z).unwrap();
            for (a, b) in s.copies[j].iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(s.copy_step[j], Some(0));
        }
    }

    #[test]
    fn broadcast_without_connections_is_noop() {
        let (t, mut s, _) = setup(TranslatorMode::Linear);
        let before = s.clone();
        let mut tr = Trace::new();
        broadcast(&mut s, &t, 1, &mut tr).unwrap();
        assert_eq!(s, before);
        assert_eq!(tr.events()[0].note.as_deref(), Some("no connected modules"));
    }

    #[test]
    fn identical_encodings_give_that_encoding() {
        let mods = vec![("a".to_string(), 2), ("b".to_string(), 2), ("c".to_string(), 2)];
        let t = GlwTranslator::identity_construction(&mods, 2).unwrap();
        let mut s = WorkspaceState::new(&t, 2, 0);
        connect(&mut s, &[0, 1]);
        s.copies[0] = vec![0.7, -0.2];
        s.copies[1] = vec![0.7, -0.2];
        broadcast(&mut s, &t, 1, &mut Trace::new()).unwrap();
        assert_eq!(s.z, vec![0.7, -0.2]);
    }

    #[test]
    fn single_module_exact_demi_cycle_fixed_after_first_iteration() {
        let mods = vec![("a".to_string(), 2), ("b".to_string(), 2)];
        let t = GlwTranslator::identity_construction(&mods, 2).unwrap();
        let mut s = WorkspaceState::new(&t, 2, 0);
        connect(&mut s, &[0]);
        s.copies[0] = vec![0.3, 0.9];
        let mut tr = Trace::new();
        broadcast(&mut s, &t, 1, &mut tr).unwrap();
        assert_eq!(s.copies[0], vec![0.3, 0.9]);
        let p = IgnitionParams { lambda: 1.0, ..Default::default() };
        reverberate(&mut s, &t, &p, 0.0, 1, &mut tr).unwrap();
        let dz: Vec<f64> = tr
            .events()
            .iter()
            .filter(|e| e.phase == Phase::Reverberate)
            .map(|e| e.dz_norm.unwrap())
            .collect();
        assert!(dz[1] < 1e-10);
    }

    #[test]
    fn reverberate_requires_broadcast() {
        let (t, mut s, _) = setup(TranslatorMode::Linear);
        connect(&mut s, &[0]);
        let r = reverberate(&mut s, &t, &IgnitionParams::default(), 0.0, 1, &mut Trace::new());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn readout_rules() {
        let (t, mut s, _) = setup(TranslatorMode::Linear);
        connect(&mut s, &[1]);
        s.copies[1] = vec![1.0, 2.0, 3.0];
        let mut tr = Trace::new();
        broadcast(&mut s, &t, 1, &mut tr).unwrap();
        let r = readout(&s, 1, None, &mut tr).unwrap();
        assert_eq!(r.latent, s.copies[1]);
        assert!(matches!(readout(&s, 0, None, &mut tr), Err(Error::Withheld(0))));
        assert!(matches!(readout(&s, 9, None, &mut tr), Err(Error::UnknownModule(9))));
    }

    #[test]
    fn empty_tick_only_advances_step() {
        let (t, mut s, mut b) = setup(TranslatorMode::Linear);
        let before = s.clone();
        let p = IgnitionParams::default();
        let ctx = TickContext { translator: &t, ignition: &p, threads: 1 };
        tick(&mut s, &[], None, &mut b, &ctx, &mut Trace::new()).unwrap();
        assert_eq!(s.step_count, 1);
        s.step_count = 0;
        assert_eq!(s, before);
    }

    #[test]
    fn master_key_event_dominates() {
        let (t, mut s, mut b) = setup(TranslatorMode::Linear);
        b.params.theta_conn = 1e9;
        let p = IgnitionParams::default();
        let ctx = TickContext { translator: &t, ignition: &p, threads: 1 };
        let ev = Event { module: 2, latent: vec![1.0, -1.0], salience: 1.0, u: 1.0 };
        let sum = tick(&mut s, &[ev.clone()], None, &mut b, &ctx, &mut Trace::new()).unwrap();
        assert_eq!(s.connected_ids(), vec![2]);
        assert_eq!(sum.n_connected, 1);
        assert!(sum.ignited);
        assert!(s.z.iter().all(|v| v.is_finite()));
    }
}
