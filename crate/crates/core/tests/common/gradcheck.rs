//! Central finite-difference checks of every layer and the whole model,
//! evaluated in f64 on small random shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rank_moe::autodiff::{Graph, ModelParams, NodeId, Tensor};
use rank_moe::config::{Ablation, LossWeights};
use rank_moe::encoders::{GatedCross, HistoryAttention, JdEncoder};
use rank_moe::heads::{joint_loss, Head, Labels, TaskTower, TowerNet};
use rank_moe::moe::{ExpertNet, GateKey, GateNet, MoeBlock, MoeShape};
use rank_moe::nn::{DropoutCtx, Linear};
use rank_moe::pipeline::{Architecture, FeatureSet, TextProviders, Vocabularies};

const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
/// Denominator floor so near-zero gradients are compared absolutely.
const FLOOR: f64 = 1e-8;
pub const SEEDS: u64 = 20;
const PROBES_PER_TENSOR: usize = 6;

#[derive(Default, Debug)]
pub struct Report {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl Report {
    fn merge(&mut self, other: Report) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.skipped * 4 <= self.checked && self.worst < TOL
    }

    pub fn assert_ok(&self, what: &str) {
        println!(
            "{what}: {} probes, {} skipped at relu kinks, worst relative error {:.2e} ({})",
            self.checked, self.skipped, self.worst, self.worst_at
        );
        assert!(self.checked > 0, "{what}: nothing checked");
        assert!(
            self.skipped * 4 <= self.checked,
            "{what}: too many probes straddle relu kinks"
        );
        assert!(self.worst < TOL, "{what}: worst error {:.3e} at {}", self.worst, self.worst_at);
    }
}

fn eval<F>(params: &ModelParams<f64>, build: &F) -> (f64, Vec<bool>)
where
    F: Fn(&mut Graph<'_, f64>) -> NodeId,
{
    let mut g = Graph::with_params(params);
    let loss = build(&mut g);
    (g.scalar(loss), g.relu_signature())
}

/// Compares analytic gradients of `build`'s scalar output with central
/// differences on a random subset of every parameter's entries.
fn check<F>(params: &ModelParams<f64>, seed: u64, build: F) -> Report
where
    F: Fn(&mut Graph<'_, f64>) -> NodeId,
{
    let mut g = Graph::with_params(params);
    let loss = build(&mut g);
    let grads = g.backward(loss).expect("backward");
    let base_sig = g.relu_signature();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut report = Report::default();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.get(&name).unwrap().len();
        let picks: Vec<usize> = if len <= PROBES_PER_TENSOR {
            (0..len).collect()
        } else {
            (0..PROBES_PER_TENSOR).map(|_| rng.gen_range(0..len)).collect()
        };
        for i in picks {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(&name).unwrap().data_mut()[i] += delta;
                eval(&p, &build)
            };
            let (plus, sig_p) = shifted(EPS);
            let (minus, sig_m) = shifted(-EPS);
            if sig_p != base_sig || sig_m != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * EPS);
            let analytic = grads.param(&name).map_or(0.0, |g| g[i]);
            let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(FLOOR);
            report.checked += 1;
            if err > report.worst {
                report.worst = err;
                report.worst_at = format!("{name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
        }
    }
    report
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Makes biases nonzero and breaks any symmetry from initialization.
fn jitter(params: &mut ModelParams<f64>, rng: &mut ChaCha8Rng) {
    for (_, t) in params.iter_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output entry matters.
fn project(g: &mut Graph<'_, f64>, out: NodeId, r: &Tensor<f64>) -> NodeId {
    let w = g.input(r.clone()).unwrap();
    let m = g.mul(out, w).unwrap();
    g.sum(m).unwrap()
}

fn offsets(rng: &mut ChaCha8Rng, rows: usize, max_len: usize) -> Vec<usize> {
    let mut o = vec![0];
    for _ in 0..rows {
        let n = rng.gen_range(0..=max_len);
        o.push(o.last().unwrap() + n);
    }
    o
}

pub fn embedding_lookup() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, dim, b) = (rng.gen_range(2..7), rng.gen_range(1..6), rng.gen_range(1..8));
        let mut p = ModelParams::new();
        p.init_embedding("emb", rows, dim, &mut rng).unwrap();
        let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..rows)).collect();
        let r = random_tensor(&mut rng, b, dim);
        total.merge(check(&p, seed, |g| {
            let t = g.param("emb").unwrap();
            let e = g.gather_rows(t, &idx).unwrap();
            project(g, e, &r)
        }));
    }
    vec![("embedding lookup", total)]
}

pub fn gated_cross() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dim, b) = (rng.gen_range(1..7), rng.gen_range(1..5));
        let layer = GatedCross::new("gcn", dim);
        let mut p = ModelParams::new();
        layer.init(&mut p, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let c0 = random_tensor(&mut rng, b, dim);
        let r = random_tensor(&mut rng, b, dim);
        total.merge(check(&p, seed, |g| {
            let x = g.input(c0.clone()).unwrap();
            let c = layer.forward(g, x).unwrap();
            project(g, c, &r)
        }));
    }
    vec![("gated cross", total)]
}

pub fn history_attention() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dim, b, rows) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(2..8));
        let layer = HistoryAttention::new("attn", dim);
        let mut p = ModelParams::new();
        layer.init(&mut p, &mut rng).unwrap();
        p.init_embedding("emb", rows, dim, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let cur: Vec<usize> = (0..b).map(|_| rng.gen_range(0..rows)).collect();
        let off = offsets(&mut rng, b, 4);
        let hist: Vec<usize> = (0..off[b]).map(|_| rng.gen_range(0..rows)).collect();
        let r = random_tensor(&mut rng, b, dim);
        total.merge(check(&p, seed, |g| {
            let t = g.param("emb").unwrap();
            let q = g.gather_rows(t, &cur).unwrap();
            let h = g.gather_rows(t, &hist).unwrap();
            let a = layer.forward(g, q, h, &off).unwrap();
            project(g, a, &r)
        }));
    }
    vec![("history attention", total)]
}

pub fn jd_encoder() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (text, id, b, rows) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4), 5);
        let jd = id + rng.gen_range(1..4);
        let enc = JdEncoder::new(text, jd, id);
        let mut p = ModelParams::new();
        enc.init(&mut p, &mut rng).unwrap();
        p.init_embedding("emb", rows, id, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let c0 = random_tensor(&mut rng, b, 2 * text);
        let cur: Vec<usize> = (0..b).map(|_| rng.gen_range(0..rows)).collect();
        let off = offsets(&mut rng, b, 3);
        let hist: Vec<usize> = (0..off[b]).map(|_| rng.gen_range(0..rows)).collect();
        let r = random_tensor(&mut rng, b, jd);
        total.merge(check(&p, seed, |g| {
            let x = g.input(c0.clone()).unwrap();
            let t = g.param("emb").unwrap();
            let q = g.gather_rows(t, &cur).unwrap();
            let h = g.gather_rows(t, &hist).unwrap();
            let e = enc.forward(g, x, q, h, &off).unwrap();
            project(g, e, &r)
        }));
    }
    vec![("jd encoder", total)]
}

pub fn expert_and_gate() -> Vec<(&'static str, Report)> {
    let mut experts = Report::default();
    let mut gates = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, b, n) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..5));
        let widths = [rng.gen_range(2..6), rng.gen_range(1..4)];
        let expert = ExpertNet::new("e", input, &widths);
        let gate = GateNet::new("g", input, &[rng.gen_range(1..4)], n);
        let mut p = ModelParams::new();
        expert.net.init(&mut p, &mut rng).unwrap();
        gate.net.init(&mut p, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let x = random_tensor(&mut rng, b, input);
        let re = random_tensor(&mut rng, b, widths[1]);
        let rg = random_tensor(&mut rng, b, n);
        experts.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let e = expert.forward(g, xi, &mut DropoutCtx::eval()).unwrap();
            project(g, e, &re)
        }));
        gates.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let w = gate.forward(g, xi).unwrap();
            project(g, w, &rg)
        }));
    }
    vec![("expert", experts), ("gate", gates)]
}

pub fn moe_block_mixtures() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, gate_in, b) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..4));
        let hidden = [rng.gen_range(2..5), 3];
        let block = MoeBlock::new(
            "moe",
            &MoeShape {
                input_dim: input,
                gate_input_dim: gate_in,
                expert_hidden: &hidden,
                gate_hidden: &[2],
                n_experts: rng.gen_range(1..4),
            },
            &GateKey::ALL,
        );
        let mut p = ModelParams::new();
        block.init(&mut p, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let x = random_tensor(&mut rng, b, input);
        let gi = random_tensor(&mut rng, b, gate_in);
        let rs: Vec<Tensor<f64>> = GateKey::ALL.iter().map(|_| random_tensor(&mut rng, b, 3)).collect();
        total.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let gn = g.input(gi.clone()).unwrap();
            let out = block.forward(g, xi, gn, &mut DropoutCtx::eval()).unwrap();
            let parts: Vec<NodeId> = GateKey::ALL
                .iter()
                .zip(&rs)
                .map(|(&k, r)| project(g, out.mixed(k).unwrap(), r))
                .collect();
            parts.into_iter().reduce(|a, c| g.add(a, c).unwrap()).unwrap()
        }));
    }
    vec![("moe block", total)]
}

pub fn towers_and_heads() -> Vec<(&'static str, Report)> {
    let mut towers = Report::default();
    let mut task = Report::default();
    let mut heads = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, relv, b) = (rng.gen_range(1..5), rng.gen_range(1..4), rng.gen_range(1..5));
        let widths = [rng.gen_range(2..5), rng.gen_range(1..4)];
        let tower = TowerNet::new("t", input, &widths, None);
        let task_tower = TaskTower::new("tt", input, Some(relv), &widths);
        let shared = rng.gen_range(1..3);
        let head = Head::new("ctr", input, Some(shared));
        let mut p = ModelParams::new();
        tower.init(&mut p, &mut rng).unwrap();
        task_tower.tower.init(&mut p, &mut rng).unwrap();
        head.linear.init(&mut p, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let x = random_tensor(&mut rng, b, input);
        let o_relv = random_tensor(&mut rng, b, relv);
        let o_s = random_tensor(&mut rng, b, shared);
        let rt = random_tensor(&mut rng, b, widths[1]);
        let rtt = random_tensor(&mut rng, b, input + relv);
        let rh = random_tensor(&mut rng, b, 2);
        towers.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let o = tower.forward(g, xi, &mut DropoutCtx::eval()).unwrap();
            project(g, o, &rt)
        }));
        task.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let ri = g.input(o_relv.clone()).unwrap();
            let o = task_tower.forward(g, xi, Some(ri), &mut DropoutCtx::eval()).unwrap();
            project(g, o, &rtt)
        }));
        heads.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let si = g.input(o_s.clone()).unwrap();
            let y = head.forward(g, xi, Some(si)).unwrap();
            project(g, y, &rh)
        }));
    }
    vec![("tower", towers), ("task tower", task), ("head", heads)]
}

pub fn joint_loss_through_heads() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, b) = (rng.gen_range(1..5), rng.gen_range(1..7));
        let heads: Vec<Head> = ["ctr", "cvr", "relv"].iter().map(|t| Head::new(t, input, None)).collect();
        let mut p = ModelParams::new();
        for h in &heads {
            h.linear.init(&mut p, &mut rng).unwrap();
        }
        jitter(&mut p, &mut rng);
        let x = random_tensor(&mut rng, b, input);
        let labels: Vec<Labels> = (0..b)
            .map(|_| {
                let click = rng.gen_bool(0.5);
                Labels {
                    click,
                    apply: click && rng.gen_bool(0.5),
                    relevant: rng.gen_bool(0.5),
                }
            })
            .collect();
        let weights = LossWeights {
            ctr: rng.gen_range(0.1..2.0),
            cvr: rng.gen_range(0.1..2.0),
            relv: rng.gen_range(0.1..2.0),
        };
        total.merge(check(&p, seed, |g| {
            let xi = g.input(x.clone()).unwrap();
            let ys: Vec<NodeId> = heads.iter().map(|h| h.forward(g, xi, None).unwrap()).collect();
            joint_loss(g, ys[0], ys[1], Some(ys[2]), &labels, &weights).unwrap().total
        }));
    }
    vec![("joint loss", total)]
}

pub fn linear_input_gradient() -> Vec<(&'static str, Report)> {
    // Tracked inputs report gradients too; check them against differences.
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, o, b) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4));
        let lin = Linear::new("l", i, o);
        let mut p = ModelParams::new();
        lin.init(&mut p, &mut rng).unwrap();
        let x = random_tensor(&mut rng, b, i);
        let r = random_tensor(&mut rng, b, o);
        let f = |x: &Tensor<f64>| {
            let mut g = Graph::with_params(&p);
            let xi = g.input_tracked(x.clone()).unwrap();
            let y = lin.forward(&mut g, xi).unwrap();
            let l = project(&mut g, y, &r);
            let grads = g.backward(l).unwrap();
            (g.scalar(l), grads.node(xi).unwrap().to_vec())
        };
        let (_, analytic) = f(&x);
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += EPS;
            let mut xm = x.clone();
            xm.data_mut()[k] -= EPS;
            let numeric = (f(&xp).0 - f(&xm).0) / (2.0 * EPS);
            let err = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(FLOOR);
            total.checked += 1;
            if err > total.worst {
                total.worst = err;
                total.worst_at = format!("seed {seed} input[{k}]");
            }
        }
    }
    vec![("linear input", total)]
}

pub fn end_to_end_model() -> Vec<(&'static str, Report)> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let ablation = Ablation::ALL[seed as usize % Ablation::ALL.len()];
        let mut cfg = super::tiny_model(ablation);
        cfg.n_experts = 1 + seed as usize % 3;
        let data = super::tiny_data(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<usize> = (0..6).map(|_| rng.gen_range(0..data.train.len())).collect();
        let records: Vec<_> = rows.iter().map(|&i| data.train[i].clone()).collect();
        let mut vocab = Vocabularies::new(&cfg);
        vocab.fit(&records);
        let resumes = records
            .iter()
            .map(|r| (r.talent_id.clone(), r.resume_text.clone()))
            .collect();
        let providers = TextProviders::for_config(&cfg);
        let features = FeatureSet::encode(&records, &vocab, &resumes, &providers, &cfg);
        let batch = features.batch::<f64>(&(0..records.len()).collect::<Vec<_>>());
        let arch = Architecture::new(&cfg).unwrap();
        let mut p = arch.init::<f64, _>(&mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let weights = LossWeights::default();
        total.merge(check(&p, seed, |g| {
            let out = arch.forward(g, &batch, &mut DropoutCtx::eval()).unwrap();
            joint_loss(g, out.y_ctr, out.y_cvr, out.y_relv, &batch.labels, &weights)
                .unwrap()
                .total
        }));
    }
    vec![("end-to-end model", total)]
}

/// Every layer check followed by the end-to-end model.
pub fn all() -> Vec<(&'static str, Report)> {
    [
        embedding_lookup(),
        gated_cross(),
        history_attention(),
        jd_encoder(),
        expert_and_gate(),
        moe_block_mixtures(),
        towers_and_heads(),
        joint_loss_through_heads(),
        linear_input_gradient(),
        end_to_end_model(),
    ]
    .into_iter()
    .flatten()
    .collect()
}
