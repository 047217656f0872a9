//! Two-photon polarization states and the closed-form quantities used
//! throughout the crate: outcome statistics, CHSH values and entanglement
//! measures.
//!
//! Basis order is |HH⟩, |HV⟩, |VH⟩, |VV⟩ with |H⟩ = |0⟩. A linear analyzer at
//! angle θ transmits cos θ|H⟩ + sin θ|V⟩; its ±1 observable is
//! cos 2θ·σz + sin 2θ·σx, so linear polarization lives in the x–z plane of the
//! Bloch sphere.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::error::{Error, Result};
use crate::linalg::{kron, pauli_x, pauli_y, pauli_z, paulis, Mat, Mat2, Mat4, C64, I, ONE, ZERO};

pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-10;
pub const PSD_FLOOR: f64 = -1e-9;

/// Tsirelson bound 2√2.
pub const TSIRELSON: f64 = 2.0 * SQRT_2;

/// Validated two-qubit density matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(Mat4);

impl DensityMatrix {
    pub fn new(m: Mat4) -> Result<Self> {
        let defect = m.hermiticity_defect();
        if defect > HERMITIAN_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "matrix is not Hermitian (defect {defect:.3e})"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace is {tr}, expected 1")));
        }
        let m = m.hermitian_part();
        let (vals, _) = m.eigh()?;
        let min = vals[3];
        if min < PSD_FLOOR {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(DensityMatrix(m))
    }

    /// Pure state from an unnormalized ket.
    pub fn pure(ket: [C64; 4]) -> Result<Self> {
        let norm: f64 = ket.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("zero or non-finite ket".into()));
        }
        let k = ket.map(|z| z / norm);
        Ok(DensityMatrix(Mat4::outer(&k)))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(Mat4::identity().scale(0.25))
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.0
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        self.0.trace_product(&self.0).re
    }

    /// Convex combination p·self + (1−p)·other.
    pub fn mix(&self, other: &Self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("mixing weight {p} outside [0, 1]")));
        }
        Ok(DensityMatrix(self.0.scale(p) + other.0.scale(1.0 - p)))
    }

    /// (U_A ⊗ U_B) ρ (U_A ⊗ U_B)†
    pub fn rotate_local(&self, u_a: &Mat2, u_b: &Mat2) -> Self {
        let u = kron(u_a, u_b);
        DensityMatrix((u * self.0 * u.adjoint()).hermitian_part())
    }

    /// ½‖ρ − σ‖₁
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        let (vals, _) = (self.0 - other.0).eigh()?;
        Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
    }

    /// ⟨ψ|ρ|ψ⟩ for a normalized ket.
    pub fn overlap(&self, ket: &[C64; 4]) -> f64 {
        let rk = self.0.mul_vec(ket);
        ket.iter()
            .zip(rk)
            .map(|(k, r)| k.conj() * r)
            .sum::<C64>()
            .re
    }
}

/// Linear polarization analysis direction, normalized to [0°, 180°).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarizerSetting {
    degrees: f64,
}

impl PolarizerSetting {
    pub fn degrees(deg: f64) -> Self {
        PolarizerSetting {
            degrees: deg.rem_euclid(180.0),
        }
    }

    pub fn as_degrees(&self) -> f64 {
        self.degrees
    }

    pub fn radians(&self) -> f64 {
        self.degrees.to_radians()
    }

    /// Bloch vector (x, y, z) of the transmitted state.
    pub fn bloch_axis(&self) -> [f64; 3] {
        let two = 2.0 * self.radians();
        [two.sin(), 0.0, two.cos()]
    }

    fn projectors(&self) -> [Mat2; 2] {
        let (s, c) = self.radians().sin_cos();
        let plus = [C64::new(c, 0.0), C64::new(s, 0.0)];
        let minus = [C64::new(-s, 0.0), C64::new(c, 0.0)];
        [Mat::outer(&plus), Mat::outer(&minus)]
    }
}

/// Correlation coefficient E(a, b) in [−1, 1].
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct CorrelationValue(f64);

impl CorrelationValue {
    pub fn new(e: f64) -> Result<Self> {
        if !(e.abs() <= 1.0 + 1e-12) {
            return Err(Error::Input(format!("correlation {e} outside [-1, 1]")));
        }
        Ok(CorrelationValue(e.clamp(-1.0, 1.0)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Joint probabilities p(A, B) indexed `[A][B]` with index 0 for +1 and 1 for −1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutcomeProbabilities(pub [[f64; 2]; 2]);

impl OutcomeProbabilities {
    pub fn get(&self, a: Outcome, b: Outcome) -> f64 {
        self.0[a.index()][b.index()]
    }

    pub fn correlation(&self) -> f64 {
        let p = &self.0;
        p[0][0] + p[1][1] - p[0][1] - p[1][0]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().flatten().sum()
    }
}

/// Dichotomic measurement outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn index(self) -> usize {
        match self {
            Outcome::Plus => 0,
            Outcome::Minus => 1,
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }
}

/// Analyzer quadruple (a₁, a₂, b₁, b₂) for the CHSH combination
/// E(a₁,b₁) + E(a₂,b₁) + E(a₁,b₂) − E(a₂,b₂).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshAngles {
    pub a1: PolarizerSetting,
    pub a2: PolarizerSetting,
    pub b1: PolarizerSetting,
    pub b2: PolarizerSetting,
}

impl ChshAngles {
    pub fn from_degrees(a1: f64, a2: f64, b1: f64, b2: f64) -> Self {
        ChshAngles {
            a1: PolarizerSetting::degrees(a1),
            a2: PolarizerSetting::degrees(a2),
            b1: PolarizerSetting::degrees(b1),
            b2: PolarizerSetting::degrees(b2),
        }
    }

    /// (45°, 0°, 22.5°, 67.5°), which reach 2√2 on the singlet.
    pub fn standard() -> Self {
        Self::from_degrees(45.0, 0.0, 22.5, 67.5)
    }
}

/// ψ⁻ = (|HV⟩ − |VH⟩)/√2.
pub fn singlet() -> DensityMatrix {
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    DensityMatrix(Mat4::outer(&[ZERO, s, -s, ZERO]))
}

/// V·|ψ⁻⟩⟨ψ⁻| + (1 − V)·I/4, physical for V ∈ [−1/3, 1].
pub fn werner(visibility: f64) -> Result<DensityMatrix> {
    if !(-1.0 / 3.0 - 1e-12..=1.0 + 1e-12).contains(&visibility) {
        return Err(Error::NonPhysical(format!(
            "Werner visibility {visibility} outside [-1/3, 1]"
        )));
    }
    let v = visibility.clamp(-1.0 / 3.0, 1.0);
    Ok(DensityMatrix(
        singlet().0.scale(v) + Mat4::identity().scale((1.0 - v) / 4.0),
    ))
}

/// Product of two linearly polarized photons.
pub fn product_state(a: PolarizerSetting, b: PolarizerSetting) -> DensityMatrix {
    let (sa, ca) = a.radians().sin_cos();
    let (sb, cb) = b.radians().sin_cos();
    let ket = [ca * cb, ca * sb, sa * cb, sa * sb].map(|x| C64::new(x, 0.0));
    DensityMatrix(Mat4::outer(&ket))
}

pub fn outcome_probabilities(
    rho: &DensityMatrix,
    a: PolarizerSetting,
    b: PolarizerSetting,
) -> OutcomeProbabilities {
    let pa = a.projectors();
    let pb = b.projectors();
    let mut p = [[0.0; 2]; 2];
    for (i, pai) in pa.iter().enumerate() {
        for (j, pbj) in pb.iter().enumerate() {
            p[i][j] = rho.0.trace_product(&kron(pai, pbj)).re.max(0.0);
        }
    }
    OutcomeProbabilities(p)
}

pub fn correlation(
    rho: &DensityMatrix,
    a: PolarizerSetting,
    b: PolarizerSetting,
) -> CorrelationValue {
    CorrelationValue(
        outcome_probabilities(rho, a, b)
            .correlation()
            .clamp(-1.0, 1.0),
    )
}

/// |E(a₁,b₁) + E(a₂,b₁) + E(a₁,b₂) − E(a₂,b₂)|
pub fn chsh(rho: &DensityMatrix, angles: &ChshAngles) -> f64 {
    let e = |a, b| correlation(rho, a, b).value();
    (e(angles.a1, angles.b1) + e(angles.a2, angles.b1) + e(angles.a1, angles.b2)
        - e(angles.a2, angles.b2))
    .abs()
}

fn bloch_observable(axis: &[f64; 3]) -> Mat2 {
    pauli_x().scale(axis[0]) + pauli_y().scale(axis[1]) + pauli_z().scale(axis[2])
}

/// E for arbitrary Bloch-sphere measurement directions.
pub fn correlation_axes(rho: &DensityMatrix, a: &[f64; 3], b: &[f64; 3]) -> f64 {
    rho.0
        .trace_product(&kron(&bloch_observable(a), &bloch_observable(b)))
        .re
}

/// CHSH value for arbitrary projective measurements given as Bloch vectors.
pub fn chsh_axes(rho: &DensityMatrix, alice: &[[f64; 3]; 2], bob: &[[f64; 3]; 2]) -> f64 {
    let e = |a, b| correlation_axes(rho, a, b);
    (e(&alice[0], &bob[0]) + e(&alice[1], &bob[0]) + e(&alice[0], &bob[1]) - e(&alice[1], &bob[1]))
        .abs()
}

/// Wootters concurrence.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    let yy = kron(&pauli_y(), &pauli_y());
    let flipped = yy * rho.0.conj() * yy;
    let sqrt_rho = rho.0.hermitian_map(|x| x.max(0.0).sqrt())?;
    let m = sqrt_rho * flipped * sqrt_rho;
    let (mu, _) = m.eigh().map_err(|e| {
        Error::Numerical(format!(
            "concurrence: eigen-decomposition of √ρ ρ̃ √ρ failed: {e}"
        ))
    })?;
    let l = mu.map(|x| x.max(0.0).sqrt());
    Ok((l[0] - l[1] - l[2] - l[3]).max(0.0))
}

/// Tangle T = C².
pub fn tangle(rho: &DensityMatrix) -> Result<f64> {
    concurrence(rho).map(|c| c * c)
}

/// S_L = (4/3)(1 − Tr ρ²)
pub fn linear_entropy(rho: &DensityMatrix) -> f64 {
    4.0 / 3.0 * (1.0 - rho.purity())
}

/// Columns are the magic-basis vectors; maximally entangled states are the
/// real unit vectors in this basis up to a global phase.
fn magic_basis() -> Mat4 {
    let h = FRAC_1_SQRT_2;
    let cols: [[C64; 4]; 4] = [
        [ONE * h, ZERO, ZERO, ONE * h],
        [I * h, ZERO, ZERO, -I * h],
        [ZERO, I * h, I * h, ZERO],
        [ZERO, ONE * h, -ONE * h, ZERO],
    ];
    Mat4::from_fn(|i, j| cols[j][i])
}

/// Largest overlap ⟨Φ|ρ|Φ⟩ over maximally entangled |Φ⟩.
pub fn fully_entangled_fraction(rho: &DensityMatrix) -> Result<f64> {
    let m = magic_basis();
    let in_magic = m.adjoint() * rho.0 * m;
    let real = Mat4::from_fn(|i, j| C64::new(in_magic.0[i][j].re, 0.0));
    let (vals, _) = real.eigh()?;
    Ok(vals[0])
}

/// T_ij = Tr[ρ σᵢ⊗σⱼ] for i, j ∈ {x, y, z}.
pub fn correlation_matrix(rho: &DensityMatrix) -> [[f64; 3]; 3] {
    let s = paulis();
    let mut t = [[0.0; 3]; 3];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, tij) in row.iter_mut().enumerate() {
            *tij = rho.0.trace_product(&kron(&s[i + 1], &s[j + 1])).re;
        }
    }
    t
}

/// Best CHSH value over all projective measurements and directions reaching it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalChsh {
    pub value: f64,
    pub alice: [[f64; 3]; 2],
    pub bob: [[f64; 3]; 2],
}

impl OptimalChsh {
    /// The optimal directions as linear polarizer angles, if all four lie in
    /// the linear-polarization plane of the Bloch sphere.
    pub fn linear_angles(&self) -> Option<ChshAngles> {
        let to_angle = |v: &[f64; 3]| {
            (v[1].abs() < 1e-9)
                .then(|| PolarizerSetting::degrees(v[0].atan2(v[2]).to_degrees() / 2.0))
        };
        Some(ChshAngles {
            a1: to_angle(&self.alice[0])?,
            a2: to_angle(&self.alice[1])?,
            b1: to_angle(&self.bob[0])?,
            b2: to_angle(&self.bob[1])?,
        })
    }
}

fn mat3_vec(t: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| (0..3).map(|j| t[i][j] * v[j]).sum())
}

fn norm3(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit_or(v: [f64; 3], fallback: [f64; 3]) -> [f64; 3] {
    let n = norm3(&v);
    if n > 1e-12 {
        v.map(|x| x / n)
    } else {
        fallback
    }
}

/// Horodecki criterion: S_opt = 2√(u₁ + u₂) with u₁ ≥ u₂ the two largest
/// eigenvalues of TᵀT.
pub fn horodecki_optimal_chsh(rho: &DensityMatrix) -> Result<OptimalChsh> {
    let t = correlation_matrix(rho);
    let mut ttt = [[0.0; 3]; 3];
    for (i, row) in ttt.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (0..3).map(|k| t[k][i] * t[k][j]).sum();
        }
    }
    let (u, vecs) = Mat::<3>::from_real(ttt).eigh()?;
    let c1: [f64; 3] = std::array::from_fn(|i| vecs.0[i][0].re);
    let c2: [f64; 3] = std::array::from_fn(|i| vecs.0[i][1].re);
    let u1 = u[0].max(0.0);
    let u2 = u[1].max(0.0);

    let tc1 = mat3_vec(&t, &c1);
    let tc2 = mat3_vec(&t, &c2);
    let phi = u2.sqrt().atan2(u1.sqrt());
    let (sp, cp) = phi.sin_cos();
    let a1 = unit_or(tc1, c1);
    let a2 = unit_or(tc2, orthogonal_to(&a1));
    let b1 = std::array::from_fn(|i| cp * c1[i] + sp * c2[i]);
    let b2 = std::array::from_fn(|i| cp * c1[i] - sp * c2[i]);

    Ok(OptimalChsh {
        value: 2.0 * (u1 + u2).sqrt(),
        alice: [a1, a2],
        bob: [b1, b2],
    })
}

fn orthogonal_to(v: &[f64; 3]) -> [f64; 3] {
    let pick = if v[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let d: f64 = (0..3).map(|i| pick[i] * v[i]).sum();
    unit_or(std::array::from_fn(|i| pick[i] - d * v[i]), [0.0, 0.0, 1.0])
}

/// S = V·2√2.
pub fn visibility_to_s(visibility: f64) -> f64 {
    visibility * TSIRELSON
}

/// Single-qubit unitary exp(−iθ n·σ/2).
pub fn su2(axis: [f64; 3], angle: f64) -> Mat2 {
    let n = unit_or(axis, [0.0, 0.0, 1.0]);
    let (s, c) = (angle / 2.0).sin_cos();
    Mat2::identity().scale(c) - bloch_observable(&n).scale_c(I * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn singlet_is_pure_and_maximally_entangled() {
        let s = singlet();
        assert!(close(s.matrix().trace().re, 1.0, 1e-15));
        assert!(close(s.purity(), 1.0, 1e-14));
        assert!(close(tangle(&s).unwrap(), 1.0, 1e-9));
        assert!(close(linear_entropy(&s), 0.0, 1e-14));
        assert!(close(fully_entangled_fraction(&s).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn singlet_anticorrelated_at_equal_angles() {
        let s = singlet();
        for deg in [0.0, 17.0, 45.0, 90.0, 133.3] {
            let p = PolarizerSetting::degrees(deg);
            assert!(close(correlation(&s, p, p).value(), -1.0, 1e-12));
        }
        let p = outcome_probabilities(
            &s,
            PolarizerSetting::degrees(0.0),
            PolarizerSetting::degrees(0.0),
        );
        assert!(close(p.0[0][0], 0.0, 1e-15) && close(p.0[1][1], 0.0, 1e-15));
        assert!(close(p.0[0][1], 0.5, 1e-15) && close(p.0[1][0], 0.5, 1e-15));
    }

    #[test]
    fn singlet_correlation_closed_form() {
        let s = singlet();
        let e = correlation(
            &s,
            PolarizerSetting::degrees(0.0),
            PolarizerSetting::degrees(22.5),
        )
        .value();
        assert!(close(e, -FRAC_1_SQRT_2, 1e-12));
        let e = correlation(
            &s,
            PolarizerSetting::degrees(45.0),
            PolarizerSetting::degrees(67.5),
        )
        .value();
        assert!(close(e, -FRAC_1_SQRT_2, 1e-12));
    }

    #[test]
    fn werner_family() {
        assert_eq!(werner(1.0).unwrap(), singlet());
        let mixed = werner(0.0).unwrap();
        let p = outcome_probabilities(
            &mixed,
            PolarizerSetting::degrees(10.0),
            PolarizerSetting::degrees(80.0),
        );
        for x in p.0.iter().flatten() {
            assert!(close(*x, 0.25, 1e-15));
        }
        assert!(werner(1.1).is_err());
        assert!(werner(-0.5).is_err());
        let w = werner(0.91).unwrap();
        let a = PolarizerSetting::degrees(30.0);
        assert!(close(correlation(&w, a, a).value(), -0.91, 1e-12));
    }

    #[test]
    fn werner_entanglement_metrics_match_closed_forms() {
        let v = 0.883;
        let w = werner(v).unwrap();
        let c = (3.0 * v - 1.0) / 2.0;
        assert!(close(concurrence(&w).unwrap(), c, 1e-9));
        assert!(close(tangle(&w).unwrap(), c * c, 1e-9));
        assert!(close(
            linear_entropy(&w),
            4.0 / 3.0 * (1.0 - (1.0 + 3.0 * v * v) / 4.0),
            1e-12
        ));
        assert!(close(
            fully_entangled_fraction(&w).unwrap(),
            (3.0 * v + 1.0) / 4.0,
            1e-12
        ));
        assert!(close(
            horodecki_optimal_chsh(&w).unwrap().value,
            TSIRELSON * v,
            1e-9
        ));
    }

    #[test]
    fn chsh_reference_values() {
        let angles = ChshAngles::standard();
        assert!(close(chsh(&singlet(), &angles), TSIRELSON, 1e-12));
        assert!(close(
            chsh(&werner(0.91).unwrap(), &angles),
            0.91 * TSIRELSON,
            1e-12
        ));
        assert!(close(chsh(&werner(0.91).unwrap(), &angles), 2.57, 0.005));
        assert!(close(
            chsh(&DensityMatrix::maximally_mixed(), &angles),
            0.0,
            1e-14
        ));
    }

    #[test]
    fn visibility_budget() {
        assert!(close(visibility_to_s(0.91), 2.57, 0.01));
        assert!(close(
            visibility_to_s(0.985 * 0.99 * 0.97 * 0.91),
            2.43,
            0.01
        ));
        assert!(close(visibility_to_s(1.0), 2.8284, 1e-4));
    }

    #[test]
    fn product_states_are_unentangled() {
        let p = product_state(
            PolarizerSetting::degrees(12.0),
            PolarizerSetting::degrees(99.0),
        );
        assert!(close(tangle(&p).unwrap(), 0.0, 1e-9));
        assert!(horodecki_optimal_chsh(&p).unwrap().value <= 2.0 + 1e-9);
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        let mut m = *singlet().matrix();
        m.0[0][1] = C64::new(0.3, 0.0);
        assert!(DensityMatrix::new(m).is_err());
        assert!(DensityMatrix::new(Mat4::identity()).is_err());
        let neg = Mat4::from_real([
            [1.2, 0.0, 0.0, 0.0],
            [0.0, -0.2, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]);
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn optimal_directions_reach_the_optimum() {
        let rho = werner(0.7)
            .unwrap()
            .rotate_local(&su2([1.0, 2.0, 0.5], 0.8), &su2([0.0, 1.0, -1.0], 2.1));
        let opt = horodecki_optimal_chsh(&rho).unwrap();
        assert!(close(
            chsh_axes(&rho, &opt.alice, &opt.bob),
            opt.value,
            1e-8
        ));
    }
}
