//! Exact many-body Lindblad evolution for small rings at a frozen mean
//! field. The density matrix lives in the `2^L` occupation basis with
//! Jordan-Wigner ordering (site 0 is the least significant bit), so
//!
//! ```text
//! c_j |n> = (-1)^(n_0 + ... + n_{j-1}) |n - e_j>   if n_j = 1
//! ```
//!
//! The generator is kept in operator form; [`Liouvillian::to_dense`]
//! materializes the `4^L x 4^L` superoperator, which is how rings of up to
//! five sites are propagated.

use faer::{c64, Mat};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::model::{eigh_real, fermi, ModelParams, SingleParticleHamiltonian};

pub const MAX_SITES: usize = 6;
/// Step used by [`evolve_many_body`] when the caller has no preference.
pub const ORACLE_DT: f64 = 0.002;

fn sign_below(state: usize, j: usize) -> f64 {
    if (state & ((1usize << j) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Dense annihilation operator `c_j` on `l` sites.
pub fn annihilation(l: usize, j: usize) -> Mat<c64> {
    let dim = 1usize << l;
    let bit = 1usize << j;
    let mut c = Mat::zeros(dim, dim);
    for b in 0..dim {
        if b & bit != 0 {
            c[(b ^ bit, b)] = c64::new(sign_below(b, j), 0.0);
        }
    }
    c
}

fn scale(m: &Mat<c64>, s: c64) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

#[derive(Clone, Debug)]
pub struct ManyBodyState {
    pub rho: Mat<c64>,
    pub l: usize,
}

impl ManyBodyState {
    pub fn trace(&self) -> c64 {
        (0..self.rho.nrows()).map(|i| self.rho[(i, i)]).sum()
    }

    /// `Tr[rho sigma]`.
    pub fn overlap(&self, other: &ManyBodyState) -> c64 {
        let n = self.rho.nrows();
        let mut acc = c64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                acc += self.rho[(a, b)] * other.rho[(b, a)];
            }
        }
        acc
    }

    /// `Tr[rho O]`.
    pub fn expect(&self, op: &Mat<c64>) -> c64 {
        let n = self.rho.nrows();
        let mut acc = c64::new(0.0, 0.0);
        for a in 0..n {
            for b in 0..n {
                acc += self.rho[(a, b)] * op[(b, a)];
            }
        }
        acc
    }

    /// `theta_{jk} = Tr[rho c_j^dag c_k]`.
    pub fn correlation(&self) -> CorrelationMatrix {
        let l = self.l;
        let dim = 1usize << l;
        let mut theta = Mat::<c64>::zeros(l, l);
        // c_j^dag c_k maps |b> to |a> with a = b - e_k + e_j
        for b in 0..dim {
            for k in 0..l {
                if b & (1 << k) == 0 {
                    continue;
                }
                let mid = b ^ (1 << k);
                let sk = sign_below(b, k);
                for j in 0..l {
                    if mid & (1 << j) != 0 {
                        continue;
                    }
                    let a = mid | (1 << j);
                    let s = sk * sign_below(mid, j);
                    // Tr[rho O] = sum_{a,b} rho[b,a] O[a,b]
                    theta[(j, k)] += self.rho[(b, a)] * s;
                }
            }
        }
        CorrelationMatrix::from_mat(theta).expect("square")
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let ev = self
            .rho
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|_| Error::Eigensolver)?;
        Ok(ev[0])
    }
}

/// Gaussian density matrix with the given correlation matrix, built as a
/// product over natural orbitals `d_k` of
/// `n_k d_k^dag d_k + (1 - n_k) d_k d_k^dag`.
pub fn gaussian_state(theta: &CorrelationMatrix) -> Result<ManyBodyState> {
    let l = theta.len();
    if l > MAX_SITES {
        return Err(Error::OracleTooLarge { max: MAX_SITES, got: l });
    }
    let (n, w) = {
        let eig = theta
            .as_mat()
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::Eigensolver)?;
        let n: Vec<f64> = (0..l).map(|k| eig.S().column_vector()[k].re).collect();
        (n, eig.U().to_owned())
    };
    let dim = 1usize << l;
    let cs: Vec<Mat<c64>> = (0..l).map(|j| annihilation(l, j)).collect();
    let mut rho = Mat::<c64>::identity(dim, dim);
    for k in 0..l {
        // d_k = sum_j W_{jk} c_j gives <d_k^dag d_k'> = n_k delta
        let mut d = Mat::<c64>::zeros(dim, dim);
        for (j, c) in cs.iter().enumerate() {
            d += scale(c, w[(j, k)]);
        }
        let nk = n[k].clamp(0.0, 1.0);
        let num = d.adjoint() * &d;
        let hole = &d * d.adjoint();
        let factor = scale(&num, c64::new(nk, 0.0)) + scale(&hole, c64::new(1.0 - nk, 0.0));
        rho = &rho * &factor;
    }
    Ok(ManyBodyState { rho, l })
}

/// Lindblad generator `-i[H, .] + sum_e gamma (1-f) D[G_e] + gamma f D[G_e^dag]`
/// for a quadratic `H = sum h_jk c_j^dag c_k` and mode jump operators
/// `G_e = sum_j u*_{e,j} c_j`.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    pub l: usize,
    ham: Mat<c64>,
    /// `K = (1/2) sum_e (loss_e G^dag G + gain_e G G^dag)`; the generator
    /// is `-i(H rho - rho H) - (K rho + rho K) + jumps`.
    k: Mat<c64>,
    /// Site-basis loss kernel: jumps contribute `sum A_jk c_j rho c_k^dag`.
    loss: Mat<c64>,
    /// Gain kernel: `sum B_jk c_j^dag rho c_k`.
    gain: Mat<c64>,
}

/// Generator for a single-particle Hamiltonian given as a dense real
/// symmetric matrix (any `L <= 6`, including rings too short for
/// [`ModelParams`]).
pub fn build_liouvillian_dense(h: &Mat<f64>, gamma: f64, kbt: f64) -> Result<Liouvillian> {
    let l = h.nrows();
    if l > MAX_SITES {
        return Err(Error::OracleTooLarge { max: MAX_SITES, got: l });
    }
    let (eps, v) = eigh_real(h)?;
    let dim = 1usize << l;
    let cs: Vec<Mat<c64>> = (0..l).map(|j| annihilation(l, j)).collect();

    let mut ham = Mat::<c64>::zeros(dim, dim);
    for j in 0..l {
        for k in 0..l {
            if h[(j, k)] != 0.0 {
                ham += scale(&(cs[j].adjoint() * &cs[k]), c64::new(h[(j, k)], 0.0));
            }
        }
    }

    // u_{e,j} = v[(j, e)] is real here, so G_e = sum_j v[(j,e)] c_j
    let mut k_op = Mat::<c64>::zeros(dim, dim);
    let mut loss = Mat::<c64>::zeros(l, l);
    let mut gain = Mat::<c64>::zeros(l, l);
    for (e, &en) in eps.iter().enumerate() {
        let f = fermi(en, kbt);
        let (r_loss, r_gain) = (gamma * (1.0 - f), gamma * f);
        let mut g = Mat::<c64>::zeros(dim, dim);
        for (j, c) in cs.iter().enumerate() {
            g += scale(c, c64::new(v[(j, e)], 0.0));
        }
        let gdg = g.adjoint() * &g;
        let ggd = &g * g.adjoint();
        k_op += scale(&gdg, c64::new(0.5 * r_loss, 0.0)) + scale(&ggd, c64::new(0.5 * r_gain, 0.0));
        for a in 0..l {
            for b in 0..l {
                let w = v[(a, e)] * v[(b, e)];
                loss[(a, b)] += c64::new(r_loss * w, 0.0);
                gain[(a, b)] += c64::new(r_gain * w, 0.0);
            }
        }
    }
    Ok(Liouvillian {
        l,
        ham,
        k: k_op,
        loss,
        gain,
    })
}

/// Generator for `h` at the bath parameters of `params`.
pub fn build_liouvillian(h: &SingleParticleHamiltonian, params: &ModelParams) -> Result<Liouvillian> {
    if h.len() > MAX_SITES {
        return Err(Error::OracleTooLarge { max: MAX_SITES, got: h.len() });
    }
    build_liouvillian_dense(&h.dense(), params.gamma, params.kbt)
}

impl Liouvillian {
    pub fn dim(&self) -> usize {
        1 << self.l
    }

    /// `L[rho]`.
    pub fn apply(&self, rho: &Mat<c64>) -> Mat<c64> {
        let dim = self.dim();
        let i = c64::new(0.0, 1.0);
        let hr = &self.ham * rho;
        let rh = rho * &self.ham;
        let kr = &self.k * rho;
        let rk = rho * &self.k;
        let mut out = Mat::from_fn(dim, dim, |a, b| {
            -i * (hr[(a, b)] - rh[(a, b)]) - kr[(a, b)] - rk[(a, b)]
        });
        let l = self.l;
        for j in 0..l {
            let bj = 1usize << j;
            for k in 0..l {
                let bk = 1usize << k;
                let (wl, wg) = (self.loss[(j, k)], self.gain[(j, k)]);
                if wl == c64::new(0.0, 0.0) && wg == c64::new(0.0, 0.0) {
                    continue;
                }
                for b in 0..dim {
                    let sb = sign_below(b, k);
                    for a in 0..dim {
                        let sa = sign_below(a, j);
                        if a & bj == 0 && b & bk == 0 {
                            // c_j rho c_k^dag
                            out[(a, b)] += wl * rho[(a | bj, b | bk)] * (sa * sb);
                        } else if a & bj != 0 && b & bk != 0 {
                            // c_j^dag rho c_k
                            out[(a, b)] += wg * rho[(a ^ bj, b ^ bk)] * (sa * sb);
                        }
                    }
                }
            }
        }
        out
    }

    /// Superoperator acting on column-stacked `vec(rho)`.
    pub fn to_dense(&self) -> Mat<c64> {
        let dim = self.dim();
        let n = dim * dim;
        let mut sup = Mat::<c64>::zeros(n, n);
        let mut basis = Mat::<c64>::zeros(dim, dim);
        for col in 0..n {
            let (a, b) = (col % dim, col / dim);
            basis[(a, b)] = c64::new(1.0, 0.0);
            let img = self.apply(&basis);
            basis[(a, b)] = c64::new(0.0, 0.0);
            for bb in 0..dim {
                for aa in 0..dim {
                    sup[(aa + bb * dim, col)] = img[(aa, bb)];
                }
            }
        }
        sup
    }
}

#[derive(Clone, Debug)]
pub struct ManyBodyRun {
    pub times: Vec<f64>,
    pub thetas: Vec<CorrelationMatrix>,
    /// `Tr[rho(t) rho_ref]` when a reference was supplied.
    pub overlaps: Option<Vec<f64>>,
    pub final_state: ManyBodyState,
}

/// RK4 on `rho`, reporting `theta(t)` at every time in `t_grid`
/// (non-decreasing, starting at or after 0). Each interval is split into
/// equal substeps no longer than `dt`.
pub fn evolve_many_body(
    rho0: &ManyBodyState,
    gen: &Liouvillian,
    t_grid: &[f64],
    reference: Option<&ManyBodyState>,
    dt: f64,
) -> Result<ManyBodyRun> {
    if rho0.l != gen.l {
        return Err(Error::DimensionMismatch { expected: gen.l, got: rho0.l });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("oracle dt must be positive, got {dt}")));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParams("t_grid must be non-decreasing and non-negative".into()));
    }
    let mut rho = rho0.rho.clone();
    let mut t = 0.0;
    let mut out = ManyBodyRun {
        times: Vec::with_capacity(t_grid.len()),
        thetas: Vec::with_capacity(t_grid.len()),
        overlaps: reference.map(|_| Vec::new()),
        final_state: rho0.clone(),
    };
    let axpy = |x: &Mat<c64>, a: f64, y: &Mat<c64>| {
        Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] + y[(i, j)] * a)
    };
    // small rings: one RK4 step is the polynomial sum_k (hL)^k / k! of the
    // dense generator, and a whole interval is its n-th power
    let dense = (gen.dim() * gen.dim() <= SUPEROPERATOR_MAX_DIM).then(|| gen.to_dense());
    let mut propagators: Vec<(usize, u64, Mat<c64>)> = Vec::new();
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let n = (span / dt).ceil() as usize;
            let h = span / n as f64;
            if let Some(sup) = &dense {
                let k = match propagators.iter().position(|(m, bits, _)| *m == n && *bits == h.to_bits()) {
                    Some(k) => k,
                    None => {
                        propagators.push((n, h.to_bits(), matrix_power(&rk4_step_operator(sup, h), n)));
                        propagators.len() - 1
                    }
                };
                let d = rho.nrows();
                let v = Mat::from_fn(d * d, 1, |i, _| rho[(i % d, i / d)]);
                let w = &propagators[k].2 * &v;
                rho = Mat::from_fn(d, d, |a, b| w[(a + b * d, 0)]);
            } else {
                for _ in 0..n {
                    let k1 = gen.apply(&rho);
                    let k2 = gen.apply(&axpy(&rho, 0.5 * h, &k1));
                    let k3 = gen.apply(&axpy(&rho, 0.5 * h, &k2));
                    let k4 = gen.apply(&axpy(&rho, h, &k3));
                    rho = Mat::from_fn(rho.nrows(), rho.ncols(), |i, j| {
                        rho[(i, j)] + (k1[(i, j)] + (k2[(i, j)] + k3[(i, j)]) * 2.0 + k4[(i, j)]) * (h / 6.0)
                    });
                }
            }
            t = target;
        }
        let state = ManyBodyState { rho: rho.clone(), l: rho0.l };
        let tr = state.trace();
        if (tr - c64::new(1.0, 0.0)).norm() > 1e-6 {
            return Err(Error::Invariant {
                time: t,
                detail: format!("many-body trace drifted to {tr}"),
            });
        }
        out.times.push(t);
        out.thetas.push(state.correlation());
        if let (Some(r), Some(ov)) = (reference, out.overlaps.as_mut()) {
            ov.push(state.overlap(r).re);
        }
        out.final_state = state;
    }
    Ok(out)
}

/// Largest superoperator dimension (`4^L`) propagated in dense form.
const SUPEROPERATOR_MAX_DIM: usize = 1 << 10;

/// `I + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24`, one RK4 step of a linear
/// time-independent generator.
fn rk4_step_operator(sup: &Mat<c64>, h: f64) -> Mat<c64> {
    let n = sup.nrows();
    let mut out = Mat::<c64>::identity(n, n);
    let mut term = Mat::<c64>::identity(n, n);
    for k in 1..=4 {
        term = scale(&(sup * &term), c64::new(h / k as f64, 0.0));
        out += &term;
    }
    out
}

fn matrix_power(m: &Mat<c64>, mut n: usize) -> Mat<c64> {
    let mut acc = Mat::<c64>::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while n > 0 {
        if n & 1 == 1 {
            acc = &acc * &base;
        }
        n >>= 1;
        if n > 0 {
            base = &base * &base;
        }
    }
    acc
}

/// `<c_a^dag c_b^dag c_c c_d>` evaluated on `state`.
pub fn four_point(state: &ManyBodyState, a: usize, b: usize, c: usize, d: usize) -> c64 {
    let l = state.l;
    let ca = annihilation(l, a);
    let cb = annihilation(l, b);
    let cc = annihilation(l, c);
    let cd = annihilation(l, d);
    let op = ca.adjoint() * cb.adjoint() * &cc * &cd;
    state.expect(&op)
}

/// Largest Wick-factorization residual
/// `|<a^dag b^dag c d> - (theta_ad theta_bc - theta_ac theta_bd)|` over all index quadruples.
pub fn wick_residual(state: &ManyBodyState) -> f64 {
    let l = state.l;
    let th = state.correlation();
    let t = th.as_mat();
    let cs: Vec<Mat<c64>> = (0..l).map(|j| annihilation(l, j)).collect();
    let mut worst = 0.0f64;
    for a in 0..l {
        for b in 0..l {
            let left = cs[a].adjoint() * cs[b].adjoint();
            for c in 0..l {
                let lc = &left * &cs[c];
                for d in 0..l {
                    let op = &lc * &cs[d];
                    let exact = state.expect(&op);
                    let wick = t[(a, d)] * t[(b, c)] - t[(a, c)] * t[(b, d)];
                    worst = worst.max((exact - wick).norm());
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initstate::{random_half_filled_theta, thermal_theta_at_fixed_h, RandomInitSpec};
    use crate::model::{build_hamiltonian, diagonalize, DisplacementField};
    use crate::observables::fidelity;

    fn random_gaussian_theta(l: usize, seed: u64) -> CorrelationMatrix {
        // mixed state: blend a stirred pure state with the infinite-temperature one
        let pure = random_half_filled_theta(l, &RandomInitSpec { epsilon: 0.4, seed, filling: 0.5 }).unwrap();
        let p = pure.as_mat();
        let m = Mat::from_fn(l, l, |i, j| {
            p[(i, j)] * 0.7 + if i == j { c64::new(0.15, 0.0) } else { c64::new(0.0, 0.0) }
        });
        CorrelationMatrix::from_mat(m).unwrap()
    }

    #[test]
    fn anticommutation_relations() {
        let l = 3;
        let cs: Vec<_> = (0..l).map(|j| annihilation(l, j)).collect();
        for a in 0..l {
            for b in 0..l {
                let ac = &cs[a] * cs[b].adjoint() + cs[b].adjoint() * &cs[a];
                let aa = &cs[a] * &cs[b] + &cs[b] * &cs[a];
                let id = if a == b { 1.0 } else { 0.0 };
                for i in 0..8 {
                    for j in 0..8 {
                        let e = if i == j { id } else { 0.0 };
                        assert!((ac[(i, j)] - c64::new(e, 0.0)).norm() < 1e-15);
                        assert!(aa[(i, j)].norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_state_reproduces_theta() {
        for l in [2, 4] {
            let th = random_gaussian_theta(l, 7);
            let st = gaussian_state(&th).unwrap();
            assert!((st.trace() - c64::new(1.0, 0.0)).norm() < 1e-10);
            assert!(st.correlation().max_abs_diff(&th) < 1e-10);
            assert!(st.min_eigenvalue().unwrap() > -1e-8);
            assert!(wick_residual(&st) < 1e-10);
        }
    }

    #[test]
    fn thermal_state_is_stationary() {
        let p = ModelParams::new(4, 1.0, 0.3, 1.0, 0.01, 0.05).unwrap();
        let sigma = DisplacementField::new(vec![0.1, -0.05, 0.2, 0.0]).unwrap();
        let h = build_hamiltonian(&p, &sigma).unwrap();
        let th = thermal_theta_at_fixed_h(&diagonalize(&h).unwrap(), p.kbt);
        let rho = gaussian_state(&th).unwrap();
        let gen = build_liouvillian(&h, &p).unwrap();
        assert!(gen.apply(&rho.rho).norm_max() < 1e-8);
    }

    #[test]
    fn unitary_generator_preserves_spectrum() {
        let p = ModelParams::new(4, 1.0, 0.5, 1.0, 0.0, 0.05).unwrap();
        let h = build_hamiltonian(&p, &DisplacementField::new(vec![0.1, 0.0, -0.1, 0.05]).unwrap()).unwrap();
        let gen = build_liouvillian(&h, &p).unwrap();
        let rho0 = gaussian_state(&random_gaussian_theta(4, 3)).unwrap();
        let run = evolve_many_body(&rho0, &gen, &[0.0, 5.0], None, 0.005).unwrap();
        let a = rho0.rho.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        let b = run.final_state.rho.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_propagation_matches_operator_steps() {
        let p = ModelParams::new(4, 1.0, 0.5, 1.0, 0.05, 0.2).unwrap();
        let h = build_hamiltonian(&p, &DisplacementField::new(vec![0.1, -0.2, 0.0, 0.15]).unwrap()).unwrap();
        let gen = build_liouvillian(&h, &p).unwrap();
        let rho0 = gaussian_state(&random_gaussian_theta(4, 9)).unwrap();
        let run = evolve_many_body(&rho0, &gen, &[0.0, 0.7, 1.4], None, 0.01).unwrap();
        let mut rho = rho0.rho.clone();
        for _ in 0..140 {
            let (h, r) = (0.01, &rho);
            let k1 = gen.apply(r);
            let k2 = gen.apply(&(r + scale(&k1, c64::new(0.5 * h, 0.0))));
            let k3 = gen.apply(&(r + scale(&k2, c64::new(0.5 * h, 0.0))));
            let k4 = gen.apply(&(r + scale(&k3, c64::new(h, 0.0))));
            rho = r + scale(&(k1 + scale(&(k2 + k3), c64::new(2.0, 0.0)) + k4), c64::new(h / 6.0, 0.0));
        }
        assert!((&run.final_state.rho - &rho).norm_max() < 1e-13);
    }

    #[test]
    fn two_site_modes_relax_exponentially() {
        let (gamma, kbt, mu, t_hop) = (0.3, 0.5, 0.2, 1.0);
        let h = Mat::from_fn(2, 2, |i, j| if i == j { -mu } else { -t_hop });
        let gen = build_liouvillian_dense(&h, gamma, kbt).unwrap();
        let th0 = CorrelationMatrix::from_mat(Mat::from_fn(2, 2, |i, j| {
            if i == j {
                c64::new(if i == 0 { 0.9 } else { 0.2 }, 0.0)
            } else {
                c64::new(0.1, if i == 0 { 0.05 } else { -0.05 })
            }
        }))
        .unwrap();
        let (eps, v) = eigh_real(&h).unwrap();
        let mode_occ = |th: &CorrelationMatrix, e: usize| -> f64 {
            let t = th.as_mat();
            let mut acc = c64::new(0.0, 0.0);
            for j in 0..2 {
                for k in 0..2 {
                    acc += t[(j, k)] * (v[(j, e)] * v[(k, e)]);
                }
            }
            acc.re
        };
        let grid = [0.0, 1.0, 3.0, 6.0];
        let run = evolve_many_body(&gaussian_state(&th0).unwrap(), &gen, &grid, None, 0.002).unwrap();
        for e in 0..2 {
            let f = fermi(eps[e], kbt);
            let n0 = mode_occ(&th0, e);
            for (t, th) in run.times.iter().zip(&run.thetas) {
                let expected = f + (n0 - f) * (-gamma * t).exp();
                assert!((mode_occ(th, e) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dense_superoperator_matches_operator_form() {
        let h = Mat::from_fn(2, 2, |i, j| if i == j { 0.1 } else { -1.0 });
        let gen = build_liouvillian_dense(&h, 0.2, 0.3).unwrap();
        let sup = gen.to_dense();
        let rho = gaussian_state(&random_gaussian_theta(2, 5)).unwrap().rho;
        let out = gen.apply(&rho);
        let dim = 4;
        for a in 0..dim {
            for b in 0..dim {
                let mut acc = c64::new(0.0, 0.0);
                for col in 0..dim * dim {
                    acc += sup[(a + b * dim, col)] * rho[(col % dim, col / dim)];
                }
                assert!((acc - out[(a, b)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn overlap_matches_determinant_fidelity() {
        for seed in 0..4 {
            let a = random_gaussian_theta(4, seed);
            let b = random_gaussian_theta(4, seed + 100);
            let (ra, rb) = (gaussian_state(&a).unwrap(), gaussian_state(&b).unwrap());
            let exact = ra.overlap(&rb);
            assert!(exact.im.abs() < 1e-12);
            assert!((exact.re - fidelity(&a, &b).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn relaxes_to_thermal_state_and_stays_gaussian() {
        let p = ModelParams::new(4, 1.0, 0.5, 1.0, 0.5, 0.05).unwrap();
        let h = build_hamiltonian(&p, &DisplacementField::new(vec![0.1, 0.0, -0.1, 0.05]).unwrap()).unwrap();
        let th_eq = thermal_theta_at_fixed_h(&diagonalize(&h).unwrap(), p.kbt);
        let gen = build_liouvillian(&h, &p).unwrap();
        let rho0 = gaussian_state(&random_gaussian_theta(4, 9)).unwrap();
        let run = evolve_many_body(&rho0, &gen, &[0.0, 2.0, 40.0], None, 0.01).unwrap();
        assert!(run.thetas[0].max_abs_diff(&random_gaussian_theta(4, 9)) < 1e-10);
        assert!(run.thetas[2].max_abs_diff(&th_eq) < 1e-6);
        assert!(wick_residual(&run.final_state) < 1e-6);
    }

    #[test]
    fn too_many_sites_rejected() {
        let h = Mat::<f64>::zeros(7, 7);
        assert!(matches!(build_liouvillian_dense(&h, 0.1, 0.1), Err(Error::OracleTooLarge { .. })));
    }
}
