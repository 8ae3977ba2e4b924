#![allow(dead_code)]

use lfbm::{Entry, FactorSelector, HyperParams, LatentState, Matrix, RelationData, SideInfo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub data: RelationData,
    pub state: LatentState<f64>,
    pub hp: HyperParams<f64>,
    pub side: Option<SideInfo<f64>>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    // Sum of uniforms is enough for test inputs.
    let s: f64 = (0..6).map(|_| rng.random::<f64>()).sum();
    (s - 3.0) * scale
}

/// Random observed subset of the n×n pairs (self-pairs included) with random values.
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, density: f64) -> RelationData {
    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.random::<f64>() < density {
                entries.push(Entry::new(i, j, rng.random::<bool>()));
            }
        }
    }
    if entries.is_empty() {
        entries.push(Entry::new(0, n - 1, true));
    }
    RelationData::from_entries(n, entries, true).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, m: usize, scale: f64) -> LatentState<f64> {
    let mut st = LatentState::zeros(n, d, k, m);
    st.u = Matrix::from_fn(n, d, |_, _| normal(rng, scale));
    st.v = Matrix::from_fn(n, d, |_, _| normal(rng, scale));
    st.c = Matrix::from_fn(k, k, |_, _| normal(rng, scale));
    st.z = (0..n).map(|_| rng.random_range(0..k)).collect();
    st.beta = (0..m).map(|_| normal(rng, scale)).collect();
    st.bias = normal(rng, scale);
    st
}

pub fn random_side(rng: &mut ChaCha8Rng, data: &RelationData, m: usize) -> SideInfo<f64> {
    let mut side = SideInfo::new(m);
    for e in data.entries() {
        if rng.random::<f64>() < 0.8 {
            side.insert(e.i, e.j, (0..m).map(|_| normal(rng, 1.0)).collect()).unwrap();
        }
    }
    side
}

/// Random small instance; roughly half carry side information.
pub fn random_instance(seed: u64, max_n: usize, max_d: usize, max_k: usize) -> Instance {
    build_instance(seed, max_n, max_d, max_k, false)
}

/// Random small instance that always has side information.
pub fn random_instance_with_side(seed: u64, max_n: usize, max_d: usize, max_k: usize) -> Instance {
    build_instance(seed, max_n, max_d, max_k, true)
}

fn build_instance(seed: u64, max_n: usize, max_d: usize, max_k: usize, force_side: bool) -> Instance {
    let mut r = rng(seed);
    let n = r.random_range(2..=max_n);
    let d = r.random_range(1..=max_d);
    let k = r.random_range(1..=max_k);
    let m = if force_side || r.random::<bool>() { r.random_range(1..=3) } else { 0 };
    let density = r.random_range(0.3..0.9);
    let data = random_data(&mut r, n, density);
    let state = random_state(&mut r, n, d, k, m, 1.0);
    let side = (m > 0).then(|| random_side(&mut r, &data, m));
    let hp = HyperParams {
        d,
        k,
        lambda_u: r.random_range(0.1..2.0),
        lambda_v: r.random_range(0.1..2.0),
        lambda_c: r.random_range(0.1..2.0),
        lambda_beta: r.random_range(0.1..2.0),
        ..HyperParams::default()
    };
    Instance { data, state, hp, side }
}

pub fn selectors(inst: &Instance) -> Vec<FactorSelector> {
    let n = inst.state.n();
    let mut out = vec![
        FactorSelector::URow(0),
        FactorSelector::URow(n - 1),
        FactorSelector::VRow(n / 2),
        FactorSelector::CFlat,
        FactorSelector::Bias,
    ];
    if inst.state.m() > 0 {
        out.push(FactorSelector::Beta);
    }
    out
}

/// Independent objective: explicit loops, log(1 + e^x) via ln_1p, no shared helpers.
pub fn naive_log_posterior(
    st: &LatentState<f64>,
    data: &RelationData,
    hp: &HyperParams<f64>,
    side: Option<&SideInfo<f64>>,
) -> f64 {
    let mut total = 0.0;
    for e in data.entries() {
        let mut h = st.bias + st.c[(st.z[e.i], st.z[e.j])];
        for t in 0..st.d() {
            h += st.u[(e.i, t)] * st.v[(e.j, t)];
        }
        if let Some(side) = side {
            for (b, x) in st.beta.iter().zip(side.get(e.i, e.j)) {
                h += b * x;
            }
        }
        let llp = if h > 0.0 { h + (-h).exp().ln_1p() } else { h.exp().ln_1p() };
        total += if e.s { h } else { 0.0 } - llp;
    }
    let sq = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
    total
        - 0.5 * hp.lambda_u * sq(st.u.as_slice())
        - 0.5 * hp.lambda_v * sq(st.v.as_slice())
        - 0.5 * hp.lambda_c * sq(st.c.as_slice())
        - 0.5 * hp.lambda_beta * sq(&st.beta)
}

pub fn block(which: FactorSelector, st: &LatentState<f64>) -> Vec<f64> {
    match which {
        FactorSelector::URow(i) => st.u.row(i).to_vec(),
        FactorSelector::VRow(i) => st.v.row(i).to_vec(),
        FactorSelector::CFlat => st.c.as_slice().to_vec(),
        FactorSelector::Beta => st.beta.clone(),
        FactorSelector::Bias => vec![st.bias],
    }
}

pub fn with_block(which: FactorSelector, st: &LatentState<f64>, values: &[f64]) -> LatentState<f64> {
    let mut out = st.clone();
    match which {
        FactorSelector::URow(i) => out.u.row_mut(i).copy_from_slice(values),
        FactorSelector::VRow(i) => out.v.row_mut(i).copy_from_slice(values),
        FactorSelector::CFlat => out.c.as_mut_slice().copy_from_slice(values),
        FactorSelector::Beta => out.beta.copy_from_slice(values),
        FactorSelector::Bias => out.bias = values[0],
    }
    out
}

/// Central differences of the naive objective in the block.
pub fn fd_gradient(inst: &Instance, which: FactorSelector, step: f64) -> Vec<f64> {
    let base = block(which, &inst.state);
    (0..base.len())
        .map(|t| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[t] += step;
            minus[t] -= step;
            let f = |v: &[f64]| naive_log_posterior(&with_block(which, &inst.state, v), &inst.data, &inst.hp, inst.side.as_ref());
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1.0)
}

/// Smallest eigenvalue of a symmetric matrix via nalgebra.
pub fn min_eigenvalue(m: &Matrix<f64>) -> f64 {
    let dm = nalgebra::DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)]);
    dm.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn difference(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)] - b[(r, c)])
}

/// AUC by counting every positive/negative pair.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// NMI from the contingency table, `2 I / (H_a + H_b)`.
pub fn entropy_nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1.0;
    }
    let pa: Vec<f64> = joint.iter().map(|row| row.iter().sum::<f64>() / n).collect();
    let pb: Vec<f64> = (0..kb).map(|y| joint.iter().map(|row| row[y]).sum::<f64>() / n).collect();
    let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let p = joint[x][y] / n;
            if p > 0.0 {
                mi += p * (p / (pa[x] * pb[y])).ln();
            }
        }
    }
    2.0 * mi / (ha + hb)
}
