//! Array geometry, diffuse-noise coherence, super-directive weight design,
//! and beamforming in complex and real-valued forms.
//!
//! The super-directive design solves `w = Z^-1 v / (v^H Z^-1 v)` with
//! `Z = Sigma_N + sigma_d I`, where `Sigma_N` is the spherically isotropic
//! noise coherence matrix. `Sigma_N` is real symmetric, so the complex system
//! splits into two real solves sharing one Cholesky factorization.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FrameSpec, SpectralFrame};
use crate::SPEED_OF_SOUND;

/// Default diagonal loading relative to the unit-diagonal coherence matrix.
pub const DEFAULT_DIAGONAL_LOADING: f64 = 0.01;
/// Default number of uniformly spaced look directions.
pub const DEFAULT_N_DIRECTIONS: usize = 12;

/// Sensor positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub name: String,
    pub positions: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn new(name: impl Into<String>, positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("geometry needs at least one sensor"));
        }
        Ok(ArrayGeometry {
            name: name.into(),
            positions,
        })
    }

    /// Reference array: six sensors equi-spaced on a 72 mm-diameter circle
    /// plus one at the center. The center sensor is channel 0.
    pub fn circular_7() -> Self {
        let radius = 0.036;
        let mut positions = vec![[0.0, 0.0, 0.0]];
        for i in 0..6 {
            let az = std::f64::consts::PI * i as f64 / 3.0;
            positions.push([radius * az.cos(), radius * az.sin(), 0.0]);
        }
        ArrayGeometry {
            name: "circular-7".into(),
            positions,
        }
    }

    /// Channel indices into [`Self::circular_7`] for the standard subsets:
    /// 1 = center, 2 = diagonally opposite perimeter pair, 4 = center plus
    /// three alternating perimeter sensors, 7 = all.
    pub fn reference_subset(n_mics: usize) -> Result<Vec<usize>> {
        match n_mics {
            1 => Ok(vec![0]),
            2 => Ok(vec![1, 4]),
            4 => Ok(vec![0, 1, 3, 5]),
            7 => Ok((0..7).collect()),
            _ => Err(Error::invalid(format!(
                "unsupported mic count {n_mics}; expected 1, 2, 4 or 7"
            ))),
        }
    }

    pub fn subset(&self, channels: &[usize]) -> Result<Self> {
        let mut positions = Vec::with_capacity(channels.len());
        for &c in channels {
            let p = self
                .positions
                .get(c)
                .ok_or_else(|| Error::invalid(format!("channel {c} out of range")))?;
            positions.push(*p);
        }
        ArrayGeometry::new(format!("{}[{}ch]", self.name, channels.len()), positions)
    }

    pub fn n_sensors(&self) -> usize {
        self.positions.len()
    }

    /// Pairwise sensor distance in meters.
    pub fn distance(&self, m: usize, n: usize) -> f64 {
        let a = self.positions[m];
        let b = self.positions[n];
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

/// Candidate source direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookDirection {
    /// Azimuth in radians, normalized to [0, 2*pi).
    pub azimuth: f64,
    /// Elevation in radians (0 = array plane).
    pub elevation: f64,
    pub label: String,
}

impl LookDirection {
    pub fn from_azimuth(azimuth: f64) -> Self {
        let az = azimuth.rem_euclid(2.0 * std::f64::consts::PI);
        LookDirection {
            azimuth: az,
            elevation: 0.0,
            label: format!("az{:.0}", az.to_degrees()),
        }
    }

    /// Unit vector pointing from the array toward the source.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (saz, caz) = self.azimuth.sin_cos();
        let (sel, cel) = self.elevation.sin_cos();
        [cel * caz, cel * saz, sel]
    }
}

/// `d` azimuths uniformly spaced over the circle at elevation 0.
pub fn uniform_directions(d: usize) -> Vec<LookDirection> {
    (0..d)
        .map(|i| LookDirection::from_azimuth(2.0 * std::f64::consts::PI * i as f64 / d as f64))
        .collect()
}

/// Array manifold vector: `v_m = exp(-j w tau_m)` with
/// `tau_m = -(u . r_m) / c`, `u` the unit direction toward the source.
/// Every component has unit modulus.
pub fn manifold_vector(
    geom: &ArrayGeometry,
    p: &LookDirection,
    omega: f64,
    c: f64,
) -> Vec<Complex64> {
    let u = p.unit_vector();
    geom.positions
        .iter()
        .map(|r| {
            let tau = -(u[0] * r[0] + u[1] * r[1] + u[2] * r[2]) / c;
            let phase = -omega * tau;
            Complex64::new(phase.cos(), phase.sin())
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Spherically isotropic (diffuse) noise coherence matrix:
/// `Sigma[m][n] = sinc(w d_mn / c)`. Symmetric with unit diagonal.
pub fn diffuse_coherence(geom: &ArrayGeometry, omega: f64, c: f64) -> Array2<f64> {
    let m = geom.n_sensors();
    let mut sigma = Array2::zeros((m, m));
    for i in 0..m {
        sigma[(i, i)] = 1.0;
        for j in i + 1..m {
            let v = sinc(omega * geom.distance(i, j) / c);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    sigma
}

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Returns the lower factor, or `SingularCoherence` when a pivot collapses.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 1e-12 {
                    return Err(Error::SingularCoherence);
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Super-directive weights for an explicit coherence matrix and manifold
/// vector: `w = Z^-1 v / (v^H Z^-1 v)` with `Z = sigma + loading * I`.
pub fn sd_weights_for_manifold(
    coherence: &Array2<f64>,
    v: &[Complex64],
    loading: f64,
) -> Result<Vec<Complex64>> {
    let m = v.len();
    if coherence.nrows() != m || coherence.ncols() != m {
        return Err(Error::dim(m, coherence.nrows(), "coherence matrix"));
    }
    if loading < 0.0 {
        return Err(Error::invalid("diagonal loading must be >= 0"));
    }
    let mut z = coherence.clone();
    for i in 0..m {
        z[(i, i)] += loading;
    }
    let l = cholesky(&z)?;
    let re: Vec<f64> = v.iter().map(|x| x.re).collect();
    let im: Vec<f64> = v.iter().map(|x| x.im).collect();
    let yr = cholesky_solve(&l, &re);
    let yi = cholesky_solve(&l, &im);
    let y: Vec<Complex64> = yr
        .iter()
        .zip(yi.iter())
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    let denom: Complex64 = v.iter().zip(y.iter()).map(|(vi, yi)| vi.conj() * yi).sum();
    if denom.norm() < 1e-300 {
        return Err(Error::SingularCoherence);
    }
    Ok(y.into_iter().map(|yi| yi / denom).collect())
}

/// Super-directive beamformer weights against the diffuse noise field.
pub fn sd_weights(
    geom: &ArrayGeometry,
    p: &LookDirection,
    omega: f64,
    loading: f64,
    c: f64,
) -> Result<Vec<Complex64>> {
    let sigma = diffuse_coherence(geom, omega, c);
    let v = manifold_vector(geom, p, omega, c);
    sd_weights_for_manifold(&sigma, &v, loading)
}

/// Beamforming operation `Y = w^H X`.
pub fn apply_beamformer(w: &[Complex64], x: &[Complex64]) -> Result<Complex64> {
    if w.len() != x.len() {
        return Err(Error::dim(w.len(), x.len(), "apply_beamformer"));
    }
    Ok(w.iter().zip(x.iter()).map(|(wi, xi)| wi.conj() * xi).sum())
}

/// Real-valued form of the beamforming operation: a 2M x 2 matrix `R` such
/// that `R^T [Re X_1, Im X_1, ...] = [Re(w^H X), Im(w^H X)]`. Rows per
/// sensor m: `[Re w_m, -Im w_m]` and `[Im w_m, Re w_m]`.
pub fn realify_weights(w: &[Complex64]) -> Array2<f64> {
    let m = w.len();
    let mut r = Array2::zeros((2 * m, 2));
    for (i, wi) in w.iter().enumerate() {
        r[(2 * i, 0)] = wi.re;
        r[(2 * i, 1)] = -wi.im;
        r[(2 * i + 1, 0)] = wi.im;
        r[(2 * i + 1, 1)] = wi.re;
    }
    r
}

/// Interleaves a complex snapshot as `[Re X_1, Im X_1, ..., Re X_M, Im X_M]`.
pub fn realify_snapshot(x: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len());
    for xi in x {
        out.push(xi.re);
        out.push(xi.im);
    }
    out
}

/// Applies the real-valued beamforming form: `[Re Y, Im Y] = R^T x`.
pub fn apply_realified(r: &Array2<f64>, x_interleaved: &[f64]) -> Result<[f64; 2]> {
    if r.nrows() != x_interleaved.len() {
        return Err(Error::dim(r.nrows(), x_interleaved.len(), "apply_realified"));
    }
    let mut y = [0.0; 2];
    for (i, &xi) in x_interleaved.iter().enumerate() {
        y[0] += r[(i, 0)] * xi;
        y[1] += r[(i, 1)] * xi;
    }
    Ok(y)
}

/// Fixed beamformers for `D` look directions over the `K` kept bins.
#[derive(Debug, Clone)]
pub struct BeamformerBank {
    /// D x K x M complex weights.
    pub weights: Array3<Complex64>,
    pub geometry: ArrayGeometry,
    pub directions: Vec<LookDirection>,
    pub spec: FrameSpec,
    /// Per-frequency diagonal loading, length K.
    pub diagonal_loading: Vec<f64>,
}

impl BeamformerBank {
    pub fn n_directions(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_bins(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn n_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn weight(&self, d: usize, k: usize) -> Vec<Complex64> {
        (0..self.n_channels())
            .map(|m| self.weights[(d, k, m)])
            .collect()
    }

    /// Largest deviation of `w^H v` from 1 over all (direction, bin) pairs.
    pub fn max_distortionless_error(&self, c: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (d, dir) in self.directions.iter().enumerate() {
            for k in 0..self.n_bins() {
                let v = manifold_vector(&self.geometry, dir, self.spec.bin_omega(k), c);
                let w = self.weight(d, k);
                let y = apply_beamformer(&w, &v).expect("matching dims");
                worst = worst.max((y - Complex64::new(1.0, 0.0)).norm());
            }
        }
        worst
    }
}

/// Builds the super-directive bank over every (direction, kept bin) pair.
pub fn build_bank(
    geom: &ArrayGeometry,
    directions: &[LookDirection],
    spec: &FrameSpec,
    loading: f64,
) -> Result<BeamformerBank> {
    build_bank_per_freq(geom, directions, spec, &vec![loading; spec.n_bins_kept])
}

/// [`build_bank`] with a per-frequency diagonal loading schedule.
pub fn build_bank_per_freq(
    geom: &ArrayGeometry,
    directions: &[LookDirection],
    spec: &FrameSpec,
    loading: &[f64],
) -> Result<BeamformerBank> {
    if directions.is_empty() {
        return Err(Error::invalid("need at least one look direction"));
    }
    let k_bins = spec.n_bins_kept;
    if loading.len() != k_bins {
        return Err(Error::dim(k_bins, loading.len(), "loading schedule"));
    }
    let m = geom.n_sensors();
    let mut weights = Array3::from_elem((directions.len(), k_bins, m), Complex64::new(0.0, 0.0));
    for k in 0..k_bins {
        let omega = spec.bin_omega(k);
        let sigma = diffuse_coherence(geom, omega, SPEED_OF_SOUND);
        for (d, dir) in directions.iter().enumerate() {
            let v = manifold_vector(geom, dir, omega, SPEED_OF_SOUND);
            let w = sd_weights_for_manifold(&sigma, &v, loading[k])?;
            for (mi, wi) in w.into_iter().enumerate() {
                weights[(d, k, mi)] = wi;
            }
        }
    }
    Ok(BeamformerBank {
        weights,
        geometry: geom.clone(),
        directions: directions.to_vec(),
        spec: *spec,
        diagonal_loading: loading.to_vec(),
    })
}

/// Applies one direction of the bank to a frame sequence; rows are frames,
/// columns are bins.
pub fn beamform_frames(
    bank: &BeamformerBank,
    d: usize,
    frames: &[SpectralFrame],
) -> Result<Array2<Complex64>> {
    let k_bins = bank.n_bins();
    let m = bank.n_channels();
    let mut out = Array2::from_elem((frames.len(), k_bins), Complex64::new(0.0, 0.0));
    for (t, frame) in frames.iter().enumerate() {
        if frame.n_channels() != m || frame.n_bins() != k_bins {
            return Err(Error::dim(m, frame.n_channels(), "beamform_frames"));
        }
        for k in 0..k_bins {
            let mut y = Complex64::new(0.0, 0.0);
            for mi in 0..m {
                y += bank.weights[(d, k, mi)].conj() * frame.data[(k, mi)];
            }
            out[(t, k)] = y;
        }
    }
    Ok(out)
}

/// Picks the direction with the highest total output energy (ties resolve to
/// the lowest index) and returns its full beamformed output.
pub fn select_max_energy(
    bank: &BeamformerBank,
    frames: &[SpectralFrame],
) -> Result<(usize, Array2<Complex64>)> {
    if frames.is_empty() {
        return Err(Error::NoData);
    }
    let n_dirs = bank.n_directions();
    let k_bins = bank.n_bins();
    let m = bank.n_channels();
    let mut energies = vec![0.0f64; n_dirs];
    for frame in frames {
        if frame.n_channels() != m || frame.n_bins() != k_bins {
            return Err(Error::dim(m, frame.n_channels(), "select_max_energy"));
        }
        for k in 0..k_bins {
            for d in 0..n_dirs {
                let mut y = Complex64::new(0.0, 0.0);
                for mi in 0..m {
                    y += bank.weights[(d, k, mi)].conj() * frame.data[(k, mi)];
                }
                energies[d] += y.norm_sqr();
            }
        }
    }
    let mut best = 0;
    for d in 1..n_dirs {
        if energies[d] > energies[best] {
            best = d;
        }
    }
    let output = beamform_frames(bank, best, frames)?;
    Ok((best, output))
}

// --- serialized forms -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BankFile {
    geometry: ArrayGeometry,
    directions: Vec<LookDirection>,
    spec: FrameSpec,
    diagonal_loading: Vec<f64>,
    /// weights[d][k][m] = [re, im]
    weights: Vec<Vec<Vec<[f64; 2]>>>,
}

impl BeamformerBank {
    pub fn to_json(&self) -> Result<String> {
        let (nd, nk, nm) = (self.n_directions(), self.n_bins(), self.n_channels());
        let mut weights = Vec::with_capacity(nd);
        for d in 0..nd {
            let mut per_k = Vec::with_capacity(nk);
            for k in 0..nk {
                let mut per_m = Vec::with_capacity(nm);
                for m in 0..nm {
                    let w = self.weights[(d, k, m)];
                    per_m.push([w.re, w.im]);
                }
                per_k.push(per_m);
            }
            weights.push(per_k);
        }
        let file = BankFile {
            geometry: self.geometry.clone(),
            directions: self.directions.clone(),
            spec: self.spec,
            diagonal_loading: self.diagonal_loading.clone(),
            weights,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BankFile = serde_json::from_str(text)?;
        let nd = file.weights.len();
        if nd == 0 {
            return Err(Error::Malformed("bank has no directions".into()));
        }
        let nk = file.weights[0].len();
        let nm = file.geometry.n_sensors();
        if nk != file.spec.n_bins_kept || nd != file.directions.len() {
            return Err(Error::Malformed("bank dimensions disagree".into()));
        }
        let mut weights = Array3::from_elem((nd, nk, nm), Complex64::new(0.0, 0.0));
        for (d, per_k) in file.weights.iter().enumerate() {
            if per_k.len() != nk {
                return Err(Error::Malformed("ragged bank bins".into()));
            }
            for (k, per_m) in per_k.iter().enumerate() {
                if per_m.len() != nm {
                    return Err(Error::Malformed("ragged bank channels".into()));
                }
                for (m, w) in per_m.iter().enumerate() {
                    weights[(d, k, m)] = Complex64::new(w[0], w[1]);
                }
            }
        }
        Ok(BeamformerBank {
            weights,
            geometry: file.geometry,
            directions: file.directions,
            spec: file.spec,
            diagonal_loading: file.diagonal_loading,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent dense solve oracle: partial-pivot Gaussian elimination on
    /// the complex system `Z y = v`, then `w = y / (v^H y)`.
    fn sd_oracle(sigma: &Array2<f64>, v: &[Complex64], loading: f64) -> Vec<Complex64> {
        let m = v.len();
        let mut a = vec![vec![Complex64::new(0.0, 0.0); m + 1]; m];
        for i in 0..m {
            for j in 0..m {
                a[i][j] = Complex64::new(sigma[(i, j)], 0.0);
            }
            a[i][i] += loading;
            a[i][m] = v[i];
        }
        for col in 0..m {
            let pivot = (col..m)
                .max_by(|&p, &q| a[p][col].norm().partial_cmp(&a[q][col].norm()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let piv = a[col][col];
            for j in col..=m {
                a[col][j] /= piv;
            }
            for row in 0..m {
                if row != col {
                    let factor = a[row][col];
                    for j in col..=m {
                        let v = a[col][j];
                        a[row][j] -= factor * v;
                    }
                }
            }
        }
        let y: Vec<Complex64> = (0..m).map(|i| a[i][m]).collect();
        let denom: Complex64 = v.iter().zip(y.iter()).map(|(vi, yi)| vi.conj() * yi).sum();
        y.into_iter().map(|yi| yi / denom).collect()
    }

    /// Cyclic Jacobi eigenvalues of a small symmetric matrix.
    fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    off += m[(i, j)].abs();
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * m[(p, q)]).atan2(m[(q, q)] - m[(p, p)]);
                    let (s, c) = theta.sin_cos();
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                }
            }
        }
        (0..n).map(|i| m[(i, i)]).collect()
    }

    fn pair_geometry(spacing: f64) -> ArrayGeometry {
        ArrayGeometry::new(
            "pair",
            vec![[0.0, 0.0, 0.0], [spacing, 0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn manifold_origin_sensor_is_unity() {
        let geom = ArrayGeometry::new("one", vec![[0.0, 0.0, 0.0]]).unwrap();
        let p = LookDirection::from_azimuth(1.234);
        let v = manifold_vector(&geom, &p, 2.0 * std::f64::consts::PI * 3000.0, SPEED_OF_SOUND);
        assert!((v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn manifold_broadside_pair_is_equal_phase() {
        let geom = pair_geometry(0.072);
        // Arrival perpendicular to the x-axis pair.
        let p = LookDirection::from_azimuth(std::f64::consts::FRAC_PI_2);
        let v = manifold_vector(&geom, &p, 2.0 * std::f64::consts::PI * 2000.0, SPEED_OF_SOUND);
        assert!((v[0] - v[1]).norm() < 1e-12);
    }

    #[test]
    fn manifold_endfire_quarter_wave_phase() {
        let d = 0.072;
        let geom = pair_geometry(d);
        let p = LookDirection::from_azimuth(0.0); // end-fire along +x
        let f = SPEED_OF_SOUND / (4.0 * d);
        let v = manifold_vector(&geom, &p, 2.0 * std::f64::consts::PI * f, SPEED_OF_SOUND);
        let phase_diff = (v[1] / v[0]).arg().abs();
        assert!((phase_diff - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        for vi in &v {
            assert!((vi.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coherence_diagonal_and_reference_value() {
        let geom = pair_geometry(0.072);
        let omega = 2.0 * std::f64::consts::PI * 1000.0;
        let sigma = diffuse_coherence(&geom, omega, SPEED_OF_SOUND);
        assert_eq!(sigma[(0, 0)], 1.0);
        assert_eq!(sigma[(1, 1)], 1.0);
        let x = omega * 0.072 / SPEED_OF_SOUND;
        assert!((sigma[(0, 1)] - x.sin() / x).abs() < 1e-15);
        assert!((sigma[(0, 1)] - 0.7344).abs() < 1e-3);
        assert_eq!(sigma[(0, 1)], sigma[(1, 0)]);
    }

    #[test]
    fn coherence_zero_at_half_wavelength() {
        let d = 0.05;
        let geom = pair_geometry(d);
        let f = SPEED_OF_SOUND / (2.0 * d);
        let sigma = diffuse_coherence(&geom, 2.0 * std::f64::consts::PI * f, SPEED_OF_SOUND);
        assert!(sigma[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn coherence_is_positive_semidefinite() {
        let geom = ArrayGeometry::circular_7();
        for f in (500..=8000).step_by(250) {
            let sigma = diffuse_coherence(&geom, 2.0 * std::f64::consts::PI * f as f64, SPEED_OF_SOUND);
            let eigs = symmetric_eigenvalues(&sigma);
            for e in eigs {
                assert!(e >= -1e-10, "negative eigenvalue {e} at {f} Hz");
            }
        }
    }

    #[test]
    fn sd_heavy_loading_approaches_delay_and_sum() {
        let geom = ArrayGeometry::circular_7();
        let p = LookDirection::from_azimuth(0.7);
        let omega = 2.0 * std::f64::consts::PI * 1500.0;
        let w = sd_weights(&geom, &p, omega, 1e6, SPEED_OF_SOUND).unwrap();
        let v = manifold_vector(&geom, &p, omega, SPEED_OF_SOUND);
        let m = geom.n_sensors() as f64;
        for (wi, vi) in w.iter().zip(v.iter()) {
            assert!((wi - vi / m).norm() < 1e-4);
        }
    }

    #[test]
    fn sd_is_distortionless() {
        let geom = ArrayGeometry::circular_7();
        for az_deg in [0.0, 45.0, 133.0] {
            let p = LookDirection::from_azimuth((az_deg as f64).to_radians());
            for f in [300.0, 2000.0, 7900.0] {
                let omega = 2.0 * std::f64::consts::PI * f;
                let w = sd_weights(&geom, &p, omega, 0.01, SPEED_OF_SOUND).unwrap();
                let v = manifold_vector(&geom, &p, omega, SPEED_OF_SOUND);
                let y = apply_beamformer(&w, &v).unwrap();
                assert!((y - Complex64::new(1.0, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sd_matches_dense_solve_oracle() {
        let geom = ArrayGeometry::circular_7();
        let p = LookDirection::from_azimuth(1.1);
        let omega = 2.0 * std::f64::consts::PI * 2000.0;
        let sigma = diffuse_coherence(&geom, omega, SPEED_OF_SOUND);
        let v = manifold_vector(&geom, &p, omega, SPEED_OF_SOUND);
        let w = sd_weights_for_manifold(&sigma, &v, 0.01).unwrap();
        let oracle = sd_oracle(&sigma, &v, 0.01);
        for (a, b) in w.iter().zip(oracle.iter()) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn sd_singular_on_coincident_sensors() {
        let geom = ArrayGeometry::new(
            "degenerate",
            vec![[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        )
        .unwrap();
        let p = LookDirection::from_azimuth(0.0);
        let omega = 2.0 * std::f64::consts::PI * 1000.0;
        assert!(matches!(
            sd_weights(&geom, &p, omega, 0.0, SPEED_OF_SOUND),
            Err(Error::SingularCoherence)
        ));
    }

    #[test]
    fn sd_phase_consistency() {
        let geom = ArrayGeometry::circular_7();
        let p = LookDirection::from_azimuth(0.3);
        let omega = 2.0 * std::f64::consts::PI * 2500.0;
        let sigma = diffuse_coherence(&geom, omega, SPEED_OF_SOUND);
        let v = manifold_vector(&geom, &p, omega, SPEED_OF_SOUND);
        let w = sd_weights_for_manifold(&sigma, &v, 0.01).unwrap();
        let phase = Complex64::from_polar(1.0, 0.9);
        let v2: Vec<Complex64> = v.iter().map(|vi| vi * phase).collect();
        let w2 = sd_weights_for_manifold(&sigma, &v2, 0.01).unwrap();
        for (a, b) in w2.iter().zip(w.iter()) {
            assert!((a - b * phase).norm() < 1e-12);
        }
        let y = apply_beamformer(&w2, &v2).unwrap();
        assert!((y - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn apply_selector_weight() {
        let w = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let x = vec![Complex64::new(0.3, -0.4), Complex64::new(9.0, 9.0)];
        assert_eq!(apply_beamformer(&w, &x).unwrap(), x[0]);
        assert!(apply_beamformer(&w, &x[..1]).is_err());
    }

    #[test]
    fn distortionless_recovers_plane_wave_amplitude() {
        let geom = ArrayGeometry::circular_7();
        let p = LookDirection::from_azimuth(2.0);
        let omega = 2.0 * std::f64::consts::PI * 1200.0;
        let v = manifold_vector(&geom, &p, omega, SPEED_OF_SOUND);
        let w = sd_weights(&geom, &p, omega, 0.01, SPEED_OF_SOUND).unwrap();
        let s = Complex64::new(-0.7, 2.2);
        let x: Vec<Complex64> = v.iter().map(|vi| vi * s).collect();
        let y = apply_beamformer(&w, &x).unwrap();
        assert!((y - s).norm() < 1e-9);
    }

    #[test]
    fn realify_matches_spec_examples() {
        // w = [1], X = [j] -> [0, 1]
        let r = realify_weights(&[Complex64::new(1.0, 0.0)]);
        let y = apply_realified(&r, &realify_snapshot(&[Complex64::new(0.0, 1.0)])).unwrap();
        assert_eq!(y, [0.0, 1.0]);
        // w = [j], X = [j] -> conj(j) * j = 1 -> [1, 0]
        let r = realify_weights(&[Complex64::new(0.0, 1.0)]);
        let y = apply_realified(&r, &realify_snapshot(&[Complex64::new(0.0, 1.0)])).unwrap();
        assert_eq!(y, [1.0, 0.0]);
    }

    #[test]
    fn realify_matches_complex_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let m = 7;
            let w: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let x: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let y = apply_beamformer(&w, &x).unwrap();
            let yr = apply_realified(&realify_weights(&w), &realify_snapshot(&x)).unwrap();
            assert!((y.re - yr[0]).abs() < 1e-12);
            assert!((y.im - yr[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_single_sensor_is_all_ones() {
        let geom = ArrayGeometry::new("mono", vec![[0.0, 0.0, 0.0]]).unwrap();
        let spec = FrameSpec::dft_default();
        let bank = build_bank(&geom, &uniform_directions(12), &spec, 0.01).unwrap();
        for w in bank.weights.iter() {
            assert!((w - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn bank_is_distortionless_everywhere() {
        let geom = ArrayGeometry::circular_7();
        let spec = FrameSpec::dft_default();
        let bank = build_bank(&geom, &uniform_directions(4), &spec, 0.01).unwrap();
        assert!(bank.max_distortionless_error(SPEED_OF_SOUND) < 1e-10);
    }

    #[test]
    fn bank_json_roundtrip() {
        let geom = ArrayGeometry::circular_7();
        let spec = FrameSpec::dft_default();
        let bank = build_bank(&geom, &uniform_directions(3), &spec, 0.01).unwrap();
        let json = bank.to_json().unwrap();
        let back = BeamformerBank::from_json(&json).unwrap();
        assert_eq!(bank.weights, back.weights);
        assert_eq!(bank.directions, back.directions);
    }

    fn plane_wave_frames(
        bank: &BeamformerBank,
        dir: &LookDirection,
        n_frames: usize,
        seed: u64,
    ) -> Vec<SpectralFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k_bins = bank.n_bins();
        let m = bank.n_channels();
        (0..n_frames)
            .map(|t| {
                let mut data = Array2::from_elem((k_bins, m), Complex64::new(0.0, 0.0));
                for k in 0..k_bins {
                    let v = manifold_vector(
                        &bank.geometry,
                        dir,
                        bank.spec.bin_omega(k),
                        SPEED_OF_SOUND,
                    );
                    let s = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    for mi in 0..m {
                        data[(k, mi)] = v[mi] * s;
                    }
                }
                SpectralFrame {
                    data,
                    frame_index: t,
                    spec: bank.spec,
                }
            })
            .collect()
    }

    #[test]
    fn select_max_energy_finds_source_direction() {
        let geom = ArrayGeometry::circular_7();
        let spec = FrameSpec::dft_default();
        let dirs = uniform_directions(12);
        let bank = build_bank(&geom, &dirs, &spec, 0.01).unwrap();
        let frames = plane_wave_frames(&bank, &dirs[2].clone(), 6, 5);
        let (idx, output) = select_max_energy(&bank, &frames).unwrap();
        assert_eq!(idx, 2);
        assert_eq!(output.nrows(), 6);
        assert_eq!(output.ncols(), spec.n_bins_kept);

        // Positive scaling leaves the selection unchanged.
        let scaled: Vec<SpectralFrame> = frames
            .iter()
            .map(|f| SpectralFrame {
                data: f.data.mapv(|x| x * 3.5),
                frame_index: f.frame_index,
                spec: f.spec,
            })
            .collect();
        let (idx2, _) = select_max_energy(&bank, &scaled).unwrap();
        assert_eq!(idx2, 2);
    }

    #[test]
    fn select_max_energy_tie_breaks_low() {
        let geom = ArrayGeometry::circular_7();
        let spec = FrameSpec::dft_default();
        let bank = build_bank(&geom, &uniform_directions(4), &spec, 0.01).unwrap();
        // All-zero frames: every direction has zero energy.
        let data = Array2::from_elem((spec.n_bins_kept, 7), Complex64::new(0.0, 0.0));
        let frames = vec![SpectralFrame {
            data,
            frame_index: 0,
            spec,
        }];
        let (idx, _) = select_max_energy(&bank, &frames).unwrap();
        assert_eq!(idx, 0);
        assert!(select_max_energy(&bank, &[]).is_err());
    }

    #[test]
    fn reference_subsets() {
        let geom = ArrayGeometry::circular_7();
        let two = geom
            .subset(&ArrayGeometry::reference_subset(2).unwrap())
            .unwrap();
        // Diagonally opposite through the center: distance = diameter.
        assert!((two.distance(0, 1) - 0.072).abs() < 1e-12);
        assert!(ArrayGeometry::reference_subset(3).is_err());
    }
}
