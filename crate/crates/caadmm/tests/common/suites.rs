//! Seeded checks shared by the acceptance report and the ordinary test
//! targets. Each returns a summary plus a CSV of per-item results.

use std::fmt::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caadmm::graph::build_graph;
use caadmm::nn::{Activation, EdgeType, GruCell, HgaLayer, Mlp, MlpSpec, ParamStore, Tape, Topology, Var};
use caadmm::nn::hga::HgaDims;
use caadmm::policy::{CaAdmmActor, CaAdmmConfig, CaAdmmCritic, FixedPolicy, ObservationBatch};
use caadmm::probgen::{generate, Family};
use caadmm::qp::preprocess;
use caadmm::rl::{EnvConfig, QpEnv};
use caadmm::{solve, AdmmSettings, AdmmState, QpProblem, SolveStatus, SparseMatrix};

use super::*;

// ---------------------------------------------------------------- solver vs oracle

pub struct OracleSummary {
    pub instances: usize,
    /// Instances whose minimizer is unique (compared on x).
    pub unique: usize,
    pub solved: usize,
    pub oracle_found: usize,
    pub max_err: f64,
    pub csv: String,
}

/// Settings for the oracle comparison: fixed ρ = 0.1, tolerance tight
/// enough that the iterate is within 1e-3 of the optimum.
pub fn oracle_settings() -> AdmmSettings {
    AdmmSettings {
        eps_primal: 1e-7,
        eps_dual: 1e-7,
        max_iterations: 200_000,
        ..AdmmSettings::default()
    }
}

pub fn oracle_suite(seed: u64, per_family: usize) -> OracleSummary {
    let settings = oracle_settings();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("family,n,m,seed,status,iterations,oracle_sets,unique,err\n");
    let mut s = OracleSummary {
        instances: 0,
        unique: 0,
        solved: 0,
        oracle_found: 0,
        max_err: 0.0,
        csv: String::new(),
    };
    for family in Family::ALL {
        for _ in 0..per_family {
            let (n, m) = small_size(family, &mut rng);
            let inst_seed: u64 = rng.gen();
            let prob = generate(family, n, m, inst_seed).expect("generator").problem;
            let (sol, _) = solve(&prob, &mut FixedPolicy::new(0.1), &settings).expect("solve");
            let oracle = oracle_solve(&prob);
            // x is compared when the minimizer is unique; otherwise any
            // minimizer is acceptable and the objective gap is measured
            let (unique, err) = match &oracle {
                Some(o) if unique_argmin(&prob, &o.y) => {
                    (true, sol.x.iter().zip(&o.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                }
                Some(o) => {
                    let gap = (prob.objective(&sol.x) - o.objective).abs() / (1.0 + o.objective.abs());
                    (false, gap.max(violation(&prob, &sol.x)))
                }
                None => (false, f64::INFINITY),
            };
            s.instances += 1;
            s.solved += (sol.status == SolveStatus::Solved) as usize;
            s.oracle_found += oracle.is_some() as usize;
            s.unique += unique as usize;
            s.max_err = s.max_err.max(err);
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{:.3e}",
                family.name(),
                prob.n,
                prob.m,
                inst_seed,
                sol.status.as_str(),
                sol.iterations,
                oracle.map_or(0, |o| o.tried),
                unique,
                err
            )
            .unwrap();
        }
    }
    s.csv = csv;
    s
}

// ---------------------------------------------------------------- scale invariance

pub fn transform(prob: &QpProblem, c: f64, d: &[f64]) -> QpProblem {
    let p = prob.p.scale(c);
    let q = prob.q.iter().map(|v| v * c).collect();
    let a = SparseMatrix::from_triplets(
        prob.m,
        prob.n,
        prob.a.entries().iter().map(|&(r, k, v)| (r, k, v * d[r])).collect(),
    )
    .expect("same pattern");
    let l = prob.l.iter().zip(d).map(|(v, s)| v * s).collect();
    let u = prob.u.iter().zip(d).map(|(v, s)| v * s).collect();
    QpProblem::new(p, q, a, l, u).expect("valid transform")
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct ScaleSummary {
    pub triples: usize,
    pub max_diff: f64,
    pub csv: String,
}

/// Graph of the preprocessed problem at the initial ADMM state, for the
/// original and for `(cP, cq)` with row `i` of `(A, l, u)` times `d_i`.
pub fn scale_suite(seed: u64, triples: usize) -> ScaleSummary {
    let settings = AdmmSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("family,n,m,seed,c,max_feature_diff\n");
    let mut max_diff: f64 = 0.0;
    for k in 0..triples {
        let family = Family::ALL[k % Family::ALL.len()];
        let (n, m) = small_size(family, &mut rng);
        let inst_seed: u64 = rng.gen();
        let prob = generate(family, n, m, inst_seed).expect("generator").problem;
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let d: Vec<f64> = (0..prob.m).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
        let other = transform(&prob, c, &d);
        let graph = |p: &QpProblem| {
            let s = preprocess(p).expect("preprocess");
            build_graph(&s, &AdmmState::initial(&s, settings.rho_init), &settings, true).expect("graph")
        };
        let (g0, g1) = (graph(&prob), graph(&other));
        let mut diff = max_abs_diff(&g0.primal, &g1.primal).max(max_abs_diff(&g0.dual, &g1.dual));
        for t in 0..3 {
            diff = diff.max(max_abs_diff(&g0.structure.edge_features[t], &g1.structure.edge_features[t]));
        }
        assert_eq!(g0.structure.topology, g1.structure.topology);
        max_diff = max_diff.max(diff);
        writeln!(csv, "{},{},{},{},{:.6e},{:.3e}", family.name(), prob.n, prob.m, inst_seed, c, diff).unwrap();
    }
    ScaleSummary {
        triples,
        max_diff,
        csv,
    }
}

// ---------------------------------------------------------------- gradients

pub const GRAD_TOL: f64 = 1e-4;

pub fn random_topology(rng: &mut ChaCha8Rng, np: usize, nd: usize) -> Topology {
    let mut edges: [Vec<(usize, usize)>; 3] = Default::default();
    for t in EdgeType::ALL {
        let ns = if t.src_is_primal() { np } else { nd };
        let nt = if t.dst_is_primal() { np } else { nd };
        let density = rng.gen_range(0.2..0.8);
        for i in 0..ns {
            for j in 0..nt {
                if rng.gen_bool(density) {
                    edges[t.index()].push((i, j));
                }
            }
        }
    }
    Topology::new(np, nd, edges).expect("topology")
}

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    [Activation::Identity, Activation::LeakyRelu, Activation::ExpTanh][rng.gen_range(0..3)]
}

pub fn grad_mlp(rng: &mut ChaCha8Rng) -> GradReport {
    let mut store = ParamStore::new();
    let input = rng.gen_range(1..6);
    let hidden: Vec<usize> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(1..9)).collect();
    let output = rng.gen_range(1..4);
    let mlp = Mlp::new(&mut store, "m", MlpSpec::new(input, &hidden, output, activation(rng)), rng).unwrap();
    let rows = rng.gen_range(1..5);
    let x = random_matrix(rng, rows, input);
    let f = |tape: &mut Tape, store: &ParamStore, v: &[Var]| vec![mlp.forward(tape, store, v[0]).unwrap()];
    check_gradients(&store, &[x], &f, 40, rng.gen())
}

pub fn grad_gru(rng: &mut ChaCha8Rng) -> GradReport {
    let mut store = ParamStore::new();
    let (input, hidden, rows) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..5));
    let cell = GruCell::new(&mut store, "g", input, hidden, rng).unwrap();
    let x = random_matrix(rng, rows, input);
    let h = random_matrix(rng, rows, hidden);
    let f = |tape: &mut Tape, store: &ParamStore, v: &[Var]| {
        // two steps so gradients flow through the recurrence
        let h1 = cell.forward(tape, store, v[0], v[1]).unwrap();
        vec![cell.forward(tape, store, v[0], h1).unwrap()]
    };
    check_gradients(&store, &[x, h], &f, 40, rng.gen())
}

pub fn grad_hga(rng: &mut ChaCha8Rng) -> GradReport {
    let mut store = ParamStore::new();
    let (np, nd) = (rng.gen_range(1..5), rng.gen_range(1..5));
    let topo = random_topology(rng, np, nd);
    let dims = HgaDims {
        primal_in: rng.gen_range(1..10),
        dual_in: rng.gen_range(1..10),
        edge_in: [rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4)],
    };
    let layer = HgaLayer::new(&mut store, "h", dims, rng).unwrap();
    let mut inputs = vec![
        random_matrix(rng, np, dims.primal_in),
        random_matrix(rng, nd, dims.dual_in),
    ];
    for t in EdgeType::ALL {
        inputs.push(random_matrix(rng, topo.num_edges(t), dims.edge_in[t.index()]));
    }
    let f = |tape: &mut Tape, store: &ParamStore, v: &[Var]| {
        let out = layer.forward(tape, store, &topo, v[0], v[1], [v[2], v[3], v[4]]).unwrap();
        let mut outs = vec![out.primal, out.dual];
        for t in EdgeType::ALL {
            if topo.num_edges(t) > 0 {
                outs.push(out.edges[t.index()]);
            }
        }
        outs
    };
    check_gradients(&store, &inputs, &f, 60, rng.gen())
}

fn random_config(rng: &mut ChaCha8Rng) -> CaAdmmConfig {
    CaAdmmConfig {
        history_len: rng.gen_range(1..4),
        encoder_layers: rng.gen_range(1..3),
        use_context: rng.gen_bool(0.75),
        zero_init_head: false,
    }
}

fn random_obs_pair(rng: &mut ChaCha8Rng, l: usize) -> Vec<Observation> {
    let k = rng.gen_range(1..3);
    (0..k)
        .map(|_| {
            let family = Family::ALL[rng.gen_range(0..Family::ALL.len())];
            let (n, m) = small_size(family, rng);
            let _ = m;
            random_observation(rng, family, (n, n), l)
        })
        .collect()
}

pub fn grad_actor(rng: &mut ChaCha8Rng) -> GradReport {
    let config = random_config(rng);
    let actor = CaAdmmActor::new(config.clone(), rng.gen()).unwrap();
    let obs = random_obs_pair(rng, config.history_len);
    let refs: Vec<&Observation> = obs.iter().collect();
    let batch = ObservationBatch::new(&refs).unwrap();
    let f = |tape: &mut Tape, store: &ParamStore, _: &[Var]| vec![actor.net.forward(tape, store, &batch).unwrap()];
    check_gradients(&actor.store, &[], &f, 60, rng.gen())
}

pub fn grad_critic(rng: &mut ChaCha8Rng) -> GradReport {
    let config = random_config(rng);
    let critic = CaAdmmCritic::new(config.clone(), rng.gen()).unwrap();
    let obs = random_obs_pair(rng, config.history_len);
    let refs: Vec<&Observation> = obs.iter().collect();
    let batch = ObservationBatch::new(&refs).unwrap();
    let action = Array2::from_shape_fn((batch.num_dual(), 1), |_| rng.gen_range(-2.5..2.5));
    let f = |tape: &mut Tape, store: &ParamStore, v: &[Var]| vec![critic.net.forward(tape, store, &batch, v[0]).unwrap()];
    check_gradients(&critic.store, &[action], &f, 60, rng.gen())
}

pub struct GradSummary {
    pub per_network: Vec<(&'static str, GradReport)>,
    pub csv: String,
}

pub fn gradient_suite(seed: u64, configs: usize) -> GradSummary {
    let nets: [(&'static str, fn(&mut ChaCha8Rng) -> GradReport); 5] = [
        ("mlp", grad_mlp),
        ("hga", grad_hga),
        ("gru", grad_gru),
        ("actor", grad_actor),
        ("critic", grad_critic),
    ];
    let mut csv = String::from("network,config,checked,kinks,max_rel_err\n");
    let mut per_network = Vec::new();
    for (k, (name, f)) in nets.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut total = GradReport::default();
        for c in 0..configs {
            let r = f(&mut rng);
            writeln!(csv, "{name},{c},{},{},{:.3e}", r.checked, r.kinks, r.max_rel_err).unwrap();
            total.merge(r);
        }
        per_network.push((*name, total));
    }
    GradSummary { per_network, csv }
}

// ---------------------------------------------------------------- equivariance

pub struct EquivSummary {
    pub graphs: usize,
    pub max_actor_err: f64,
    pub max_critic_err: f64,
    pub max_attention_err: f64,
    pub csv: String,
}

/// Sums of α over each destination's incoming edges and of β over the edge
/// types reaching each node; returns the worst deviation from 1.
pub fn attention_sum_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    let (np, nd) = (rng.gen_range(1..6), rng.gen_range(1..6));
    let topo = random_topology(rng, np, nd);
    let dims = HgaDims {
        primal_in: 3,
        dual_in: 8,
        edge_in: [2, 1, 1],
    };
    let layer = HgaLayer::new(&mut store, "h", dims, rng).unwrap();
    let mut tape = Tape::new();
    let p = tape.constant(random_matrix(rng, np, 3));
    let d = tape.constant(random_matrix(rng, nd, 8));
    let e = EdgeType::ALL.map(|t| {
        let w = dims.edge_in[t.index()];
        tape.constant(random_matrix(rng, topo.num_edges(t), w))
    });
    let out = layer.forward(&mut tape, &store, &topo, p, d, e).unwrap();
    let mut worst: f64 = 0.0;
    for t in EdgeType::ALL {
        let k = t.index();
        let n_dst = if t.dst_is_primal() { np } else { nd };
        let mut sums = vec![0.0; n_dst];
        let mut has = vec![false; n_dst];
        let alpha = tape.value(out.alpha[k]);
        for (e, &j) in topo.dst[k].iter().enumerate() {
            sums[j] += alpha[[e, 0]];
            has[j] = true;
        }
        for j in 0..n_dst {
            if has[j] {
                worst = worst.max((sums[j] - 1.0).abs());
            }
        }
    }
    for (beta, primal) in [(out.beta_primal, true), (out.beta_dual, false)] {
        let Some(beta) = beta else { continue };
        let b = tape.value(beta);
        let n = if primal { np } else { nd };
        // β holds one row per (type, receiving node) pair in type order;
        // regroup by node through the receiver lists.
        let mut sums = vec![0.0; n];
        let mut has = vec![false; n];
        let mut row = 0;
        for t in EdgeType::ALL.iter().filter(|t| t.dst_is_primal() == primal) {
            let k = t.index();
            let mut recv: Vec<usize> = topo.dst[k].to_vec();
            recv.sort_unstable();
            recv.dedup();
            for j in recv {
                sums[j] += b[[row, 0]];
                has[j] = true;
                row += 1;
            }
        }
        assert_eq!(row, b.nrows());
        for j in 0..n {
            if has[j] {
                worst = worst.max((sums[j] - 1.0).abs());
            }
        }
    }
    worst
}

pub fn equivariance_suite(seed: u64, graphs: usize) -> EquivSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("graph,family,n,m,actor_err,critic_err,attention_err\n");
    let mut s = EquivSummary {
        graphs,
        max_actor_err: 0.0,
        max_critic_err: 0.0,
        max_attention_err: 0.0,
        csv: String::new(),
    };
    for g in 0..graphs {
        let config = random_config(&mut rng);
        let actor = CaAdmmActor::new(config.clone(), rng.gen()).unwrap();
        let critic = CaAdmmCritic::new(config.clone(), rng.gen()).unwrap();
        let family = Family::ALL[g % Family::ALL.len()];
        let (n, _) = small_size(family, &mut rng);
        let obs = random_observation(&mut rng, family, (n, n), config.history_len);
        let (np, nd) = (obs.structure.n_primal(), obs.structure.n_dual());
        let pp = random_perm(&mut rng, np);
        let dp = random_perm(&mut rng, nd);
        let pobs = permute_observation(&obs, &pp, &dp);

        let a0 = actor.log10_rho(&[&obs]).unwrap();
        let a1 = actor.log10_rho(&[&pobs]).unwrap();
        let actor_err = (0..nd).map(|i| (a0[i] - a1[dp[i]]).abs()).fold(0.0, f64::max);

        let act: Vec<f64> = (0..nd).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut pact = vec![0.0; nd];
        for i in 0..nd {
            pact[dp[i]] = act[i];
        }
        let q0 = critic.q_values(&[&obs], &act).unwrap()[0];
        let q1 = critic.q_values(&[&pobs], &pact).unwrap()[0];
        let critic_err = (q0 - q1).abs() / q0.abs().max(1.0);

        let attention_err = attention_sum_error(&mut rng);
        s.max_actor_err = s.max_actor_err.max(actor_err);
        s.max_critic_err = s.max_critic_err.max(critic_err);
        s.max_attention_err = s.max_attention_err.max(attention_err);
        writeln!(
            csv,
            "{g},{},{np},{nd},{actor_err:.3e},{critic_err:.3e},{attention_err:.3e}",
            family.name()
        )
        .unwrap();
    }
    s.csv = csv;
    s
}

// ---------------------------------------------------------------- MDP contract

pub struct MdpSummary {
    pub episodes: usize,
    pub solved: usize,
    pub violations: Vec<String>,
    pub csv: String,
}

/// Episodes with a constant random ρ per episode, checking the reward
/// values, the return of solved episodes and the step/iteration bookkeeping.
pub fn mdp_suite(seed: u64, episodes: usize) -> MdpSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = EnvConfig::default();
    let interval = config.step_interval;
    let mut env = QpEnv::new(config).unwrap();
    let mut csv = String::from("episode,family,n,m,rho,steps,return,trace_iterations,solved\n");
    let mut s = MdpSummary {
        episodes,
        solved: 0,
        violations: Vec::new(),
        csv: String::new(),
    };
    for e in 0..episodes {
        let family = Family::ALL[e % Family::ALL.len()];
        let (n, m) = small_size(family, &mut rng);
        let prob = generate(family, n, m, rng.gen()).unwrap().problem;
        let rho = 10f64.powf(rng.gen_range(-1.5..0.5));
        let mut obs = env.reset(&prob).unwrap();
        let mut ret = 0.0;
        let mut steps = 0usize;
        let solved;
        loop {
            let nd = obs.current.dual.nrows();
            let out = env.step(&vec![rho; nd]).unwrap();
            steps += 1;
            if out.reward != 0.0 && out.reward != -1.0 {
                s.violations.push(format!("episode {e}: reward {}", out.reward));
            }
            ret += out.reward;
            if out.done {
                solved = out.converged;
                break;
            }
            obs = out.observation;
        }
        let trace = env.session().unwrap().trace();
        let trace_its = trace.last().map_or(0, |r| r.iteration);
        if steps * interval != trace_its {
            s.violations.push(format!("episode {e}: {steps} steps but {trace_its} iterations"));
        }
        if trace.len() != steps || trace.iter().enumerate().any(|(k, r)| r.iteration != (k + 1) * interval) {
            s.violations.push(format!("episode {e}: trace not one record per step"));
        }
        if solved && ret != -((steps - 1) as f64) {
            s.violations.push(format!("episode {e}: solved in {steps} steps with return {ret}"));
        }
        if !solved && ret != -(steps as f64) {
            s.violations.push(format!("episode {e}: unsolved, {steps} steps, return {ret}"));
        }
        s.solved += solved as usize;
        writeln!(
            csv,
            "{e},{},{},{},{rho:.6},{steps},{ret},{trace_its},{solved}",
            family.name(),
            prob.n,
            prob.m
        )
        .unwrap();
    }
    s.csv = csv;
    s
}
