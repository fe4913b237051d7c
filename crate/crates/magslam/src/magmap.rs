//! Reduced-rank Gaussian-process magnetic field map on overlapping hexagonal
//! prism domains.
//!
//! The magnetic field is modeled as the gradient of a scalar potential with a
//! linear kernel (earth field) plus a squared-exponential kernel (local
//! anomalies). Per tile, the SE part is expanded in the Dirichlet eigenbasis
//! of the negative Laplacian on an axis-aligned box circumscribing the tile's
//! hexagonal prism, scaled by an overlap margin. The posterior over the m+3
//! potential coefficients (3 linear + m basis) is a Gaussian updated with
//! Kalman measurement steps.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexgrid::{self, HexGridSpec, HexIndex};
use crate::posemath::{self, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagHyperparams {
    /// SE kernel length scale, meters.
    pub length_scale: f64,
    /// SE kernel magnitude scale.
    pub sigma_se: f64,
    /// Linear kernel magnitude scale.
    pub sigma_lin: f64,
    /// Magnetometer noise covariance (3x3, SPD).
    pub r_m: Matrix3<f64>,
    /// Number of SE basis functions per tile.
    pub basis_size: usize,
    /// Domain extension factor (>= 1) applied to the circumscribing box.
    pub margin: f64,
}

impl MagHyperparams {
    pub fn validate(&self) -> Result<(), MagMapError> {
        if self.length_scale <= 0.0
            || self.sigma_se <= 0.0
            || self.sigma_lin <= 0.0
            || self.basis_size < 1
            || self.margin < 1.0
            || Cholesky::new(self.r_m).is_none()
        {
            return Err(MagMapError::InvalidHyperparams);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MagMapError {
    #[error("invalid hyperparameters")]
    InvalidHyperparams,
    #[error("position {0:?} outside tile domain")]
    OutsideDomain(Vector3<f64>),
    #[error("innovation covariance numerically singular")]
    SingularInnovation,
}

/// Spectral density of the 3-D squared exponential kernel:
/// `sigma^2 * (2 pi l^2)^(3/2) * exp(-lambda^2 l^2 / 2)`.
pub fn spectral_density_se(lambda: f64, hp: &MagHyperparams) -> f64 {
    let l2 = hp.length_scale * hp.length_scale;
    hp.sigma_se * hp.sigma_se
        * (2.0 * std::f64::consts::PI * l2).powf(1.5)
        * (-lambda * lambda * l2 / 2.0).exp()
}

/// Basis shared by every tile of one grid: mode numbers, eigenvalues and the
/// prior coefficient variances. Identical for all tiles, so it is computed
/// once and shared behind an `Arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBasis {
    /// Box half-lengths (Lx, Ly, Lz'), margin included.
    pub half_lengths: Vector3<f64>,
    /// Integer mode triples, sorted by decreasing spectral density.
    pub modes: Vec<[u32; 3]>,
    /// `lambda_j` (square roots of the Laplacian eigenvalues).
    pub lambdas: Vec<f64>,
    /// Diagonal of the prior covariance `P0`, length m+3.
    pub prior_diag: DVector<f64>,
}

impl TileBasis {
    /// Select the `m` modes with the largest SE spectral density on the
    /// margin-extended box of `grid`'s tiles.
    pub fn build(hp: &MagHyperparams, grid: &HexGridSpec) -> Self {
        let half_lengths = Vector3::new(
            hp.margin * grid.radius,
            hp.margin * grid.radius,
            hp.margin * grid.half_height,
        );
        let m = hp.basis_size;
        // Per-axis eigenvalue increments; grow the per-axis caps until no
        // excluded mode could beat the selected set.
        let freq = |n: u32, l: f64| std::f64::consts::PI * n as f64 / (2.0 * l);
        let mut caps = [4u32; 3];
        loop {
            let mut cands: Vec<([u32; 3], f64)> = Vec::new();
            for n1 in 1..=caps[0] {
                for n2 in 1..=caps[1] {
                    for n3 in 1..=caps[2] {
                        let l2 = freq(n1, half_lengths.x).powi(2)
                            + freq(n2, half_lengths.y).powi(2)
                            + freq(n3, half_lengths.z).powi(2);
                        cands.push(([n1, n2, n3], l2));
                    }
                }
            }
            cands.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if cands.len() >= m {
                let worst = cands[m - 1].1;
                let base: f64 = (0..3).map(|i| freq(1, half_lengths[i]).powi(2)).sum();
                let escape = (0..3).all(|i| {
                    base - freq(1, half_lengths[i]).powi(2)
                        + freq(caps[i] + 1, half_lengths[i]).powi(2)
                        > worst
                });
                if escape {
                    cands.truncate(m);
                    let modes: Vec<[u32; 3]> = cands.iter().map(|c| c.0).collect();
                    let lambdas: Vec<f64> = cands.iter().map(|c| c.1.sqrt()).collect();
                    let mut prior_diag = DVector::zeros(m + 3);
                    for i in 0..3 {
                        prior_diag[i] = hp.sigma_lin * hp.sigma_lin;
                    }
                    for (j, &l) in lambdas.iter().enumerate() {
                        prior_diag[3 + j] = spectral_density_se(l, hp);
                    }
                    return TileBasis {
                        half_lengths,
                        modes,
                        lambdas,
                        prior_diag,
                    };
                }
            }
            for c in caps.iter_mut() {
                *c *= 2;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Per-tile reduced-rank GP posterior over the m+3 potential coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MagTile {
    pub idx: HexIndex,
    pub center: Vector3<f64>,
    pub basis: Arc<TileBasis>,
    /// Coefficient mean, length m+3 (first 3 = linear/earth-field part).
    pub mean: DVector<f64>,
    /// Coefficient covariance, (m+3) x (m+3), symmetric PSD.
    pub cov: DMatrix<f64>,
}

impl MagTile {
    /// Prior tile: zero mean, diagonal prior covariance.
    pub fn prior(idx: HexIndex, basis: Arc<TileBasis>, grid: &HexGridSpec) -> Self {
        let n = basis.len() + 3;
        let mean = DVector::zeros(n);
        let cov = DMatrix::from_diagonal(&basis.prior_diag);
        MagTile {
            idx,
            center: hexgrid::center(idx, grid),
            basis,
            mean,
            cov,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let d = p - self.center;
        (0..3).all(|i| d[i].abs() <= self.basis.half_lengths[i])
    }

    /// Eigenfunction `phi_j` at `p` (domain-local value).
    pub fn eigenfunction(&self, j: usize, p: &Vector3<f64>) -> f64 {
        let l = &self.basis.half_lengths;
        let n = self.basis.modes[j];
        let mut v = 1.0;
        for i in 0..3 {
            let arg = std::f64::consts::PI * n[i] as f64 * (p[i] - self.center[i] + l[i])
                / (2.0 * l[i]);
            v *= arg.sin() / l[i].sqrt();
        }
        v
    }

    /// Gradient matrix of the potential basis at `p`: 3 x (m+3); the first
    /// 3x3 block is the identity (gradient of the linear part), the remaining
    /// columns are the analytic eigenfunction gradients.
    pub fn basis_gradients(&self, p: &Vector3<f64>) -> Result<DMatrix<f64>, MagMapError> {
        if !self.contains(p) {
            return Err(MagMapError::OutsideDomain(*p));
        }
        let m = self.basis.len();
        let l = &self.basis.half_lengths;
        let mut grad = DMatrix::zeros(3, m + 3);
        grad.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        for (j, n) in self.basis.modes.iter().enumerate() {
            let mut s = [0.0f64; 3];
            let mut c = [0.0f64; 3];
            let mut k = [0.0f64; 3];
            for i in 0..3 {
                k[i] = std::f64::consts::PI * n[i] as f64 / (2.0 * l[i]);
                let arg = k[i] * (p[i] - self.center[i] + l[i]);
                s[i] = arg.sin() / l[i].sqrt();
                c[i] = arg.cos() / l[i].sqrt();
            }
            grad[(0, 3 + j)] = k[0] * c[0] * s[1] * s[2];
            grad[(1, 3 + j)] = s[0] * k[1] * c[1] * s[2];
            grad[(2, 3 + j)] = s[0] * s[1] * k[2] * c[2];
        }
        Ok(grad)
    }

    /// Measurement matrix `C = R(q)^T * grad(Phi)` at the pose.
    fn measurement_matrix(&self, pose: &Pose) -> Result<DMatrix<f64>, MagMapError> {
        let grad = self.basis_gradients(&pose.p)?;
        let rt = posemath::to_rotation(pose.q).transpose();
        let mut c = grad;
        let tmp = &rt * &c;
        c.copy_from(&tmp);
        Ok(c)
    }

    /// Predicted magnetometer measurement and innovation covariance.
    pub fn predict_measurement(
        &self,
        pose: &Pose,
        hp: &MagHyperparams,
    ) -> Result<(Vector3<f64>, Matrix3<f64>), MagMapError> {
        let c = self.measurement_matrix(pose)?;
        let zhat = &c * &self.mean;
        let w = &self.cov * c.transpose();
        let cw = &c * w;
        let mut s3 = hp.r_m;
        s3.iter_mut()
            .zip(cw.iter())
            .for_each(|(out, val)| *out += val);
        let s3 = (s3 + s3.transpose()) / 2.0;
        Ok((Vector3::new(zhat[0], zhat[1], zhat[2]), s3))
    }

    /// Kalman measurement update with magnetometer sample `z`.
    pub fn kalman_update(
        &mut self,
        pose: &Pose,
        z: &Vector3<f64>,
        hp: &MagHyperparams,
    ) -> Result<(), MagMapError> {
        let c = self.measurement_matrix(pose)?;
        // W = P C^T (n x 3), S = C W + R
        let w = &self.cov * c.transpose();
        let cw = &c * &w;
        let mut s = hp.r_m;
        s.iter_mut()
            .zip(cw.iter())
            .for_each(|(out, val)| *out += val);
        let s = (s + s.transpose()) / 2.0;
        let chol = Cholesky::new(s).ok_or(MagMapError::SingularInnovation)?;
        // K = W S^-1; P -= W S^-1 W^T; m += K (z - C m)
        let k = {
            let mut wt = w.transpose();
            chol.solve_mut(&mut wt);
            wt.transpose()
        };
        let innov = z - Vector3::from_iterator((&c * &self.mean).iter().copied());
        self.mean += &k * innov;
        let delta = &k * w.transpose();
        self.cov -= delta;
        // re-symmetrize
        let n = self.cov.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = (self.cov[(i, j)] + self.cov[(j, i)]) / 2.0;
                self.cov[(i, j)] = v;
                self.cov[(j, i)] = v;
            }
        }
        Ok(())
    }

    /// Log marginal likelihood `log N(z; zhat, S)` of a magnetometer sample.
    pub fn log_likelihood(
        &self,
        pose: &Pose,
        z: &Vector3<f64>,
        hp: &MagHyperparams,
    ) -> Result<f64, MagMapError> {
        let (zhat, s) = self.predict_measurement(pose, hp)?;
        let chol = Cholesky::new(s).ok_or(MagMapError::SingularInnovation)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let r = z - zhat;
        let sol = chol.solve(&r);
        Ok(-0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + log_det + r.dot(&sol)))
    }
}

/// Tiles whose margin-extended domain contains `p`, nearest center first.
/// Always includes `locate(p)`.
pub fn tiles_containing(
    p: &Vector3<f64>,
    grid: &HexGridSpec,
    hp: &MagHyperparams,
) -> Vec<HexIndex> {
    let home = hexgrid::locate(p, grid);
    let half = Vector3::new(
        hp.margin * grid.radius,
        hp.margin * grid.radius,
        hp.margin * grid.half_height,
    );
    let mut out: Vec<(f64, HexIndex)> = Vec::new();
    // The margin box half-width is at most `margin * r`, while lateral
    // centers are sqrt(3) r apart; a +-2 ring is enough for any margin < 2.
    for da in -2..=2i64 {
        for db in -2..=2i64 {
            for dl in -1..=1i64 {
                let idx = HexIndex::new(home.a + da, home.b + db, home.layer + dl);
                let c = hexgrid::center(idx, grid);
                let d = p - c;
                if (0..3).all(|i| d[i].abs() <= half[i]) {
                    out.push((d.norm(), idx));
                }
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, idx)| idx).collect()
}

/// One particle's magnetic map: tiles shared copy-on-write between resampled
/// particles, cloned on first write.
#[derive(Debug, Clone)]
pub struct MagMap {
    pub grid: HexGridSpec,
    basis: Arc<TileBasis>,
    tiles: HashMap<HexIndex, Arc<MagTile>>,
}

impl MagMap {
    pub fn new(grid: HexGridSpec, hp: &MagHyperparams) -> Self {
        MagMap {
            grid,
            basis: Arc::new(TileBasis::build(hp, &grid)),
            tiles: HashMap::new(),
        }
    }

    pub fn tile(&self, idx: HexIndex) -> Option<&MagTile> {
        self.tiles.get(&idx).map(|t| t.as_ref())
    }

    pub fn tiles(&self) -> impl Iterator<Item = &MagTile> {
        self.tiles.values().map(|t| t.as_ref())
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn ensure(&mut self, idx: HexIndex) {
        let basis = self.basis.clone();
        let grid = self.grid;
        self.tiles
            .entry(idx)
            .or_insert_with(|| Arc::new(MagTile::prior(idx, basis, &grid)));
    }

    /// Install an externally stored posterior (e.g. from a map export) on a
    /// tile, replacing its mean and covariance.
    pub fn set_tile_state(
        &mut self,
        idx: HexIndex,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<(), MagMapError> {
        let n = self.basis.len() + 3;
        if mean.len() != n || cov.nrows() != n || cov.ncols() != n {
            return Err(MagMapError::InvalidHyperparams);
        }
        self.ensure(idx);
        let tile = self.tiles.get_mut(&idx).expect("just ensured");
        let t = Arc::make_mut(tile);
        t.mean = mean;
        t.cov = cov;
        Ok(())
    }

    /// Log magnetometer likelihood at the pose, evaluated on the nearest
    /// containing tile (instantiated if needed).
    pub fn log_likelihood(
        &mut self,
        pose: &Pose,
        z: &Vector3<f64>,
        hp: &MagHyperparams,
    ) -> Result<f64, MagMapError> {
        let nearest = tiles_containing(&pose.p, &self.grid, hp)[0];
        self.ensure(nearest);
        self.tiles[&nearest].log_likelihood(pose, z, hp)
    }

    /// Kalman-update every tile whose extended domain contains the pose.
    pub fn update(
        &mut self,
        pose: &Pose,
        z: &Vector3<f64>,
        hp: &MagHyperparams,
    ) -> Result<(), MagMapError> {
        for idx in tiles_containing(&pose.p, &self.grid, hp) {
            self.ensure(idx);
            let tile = self.tiles.get_mut(&idx).expect("just ensured");
            Arc::make_mut(tile).kalman_update(pose, z, hp)?;
        }
        Ok(())
    }

    /// Posterior mean field (world frame) at `p` from the nearest containing
    /// instantiated tile, if any.
    pub fn predict_field(&self, p: &Vector3<f64>, hp: &MagHyperparams) -> Option<Vector3<f64>> {
        let pose = Pose::new(*p, crate::posemath::Quat::identity());
        tiles_containing(p, &self.grid, hp)
            .into_iter()
            .find_map(|idx| self.tiles.get(&idx))
            .and_then(|t| t.predict_measurement(&pose, hp).ok())
            .map(|(z, _)| z)
    }
}
