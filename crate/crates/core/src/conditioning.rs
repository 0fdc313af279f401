//! Conditioning proposal features on the co-occurrence prior.
//!
//! Each proposal is tied to the band graphs by an association weight
//! `alpha(i, j)`; its class distribution `S` maps class-level signals back
//! to proposals. Node features (classifier weights `W`, or class-averaged
//! proposal features `P`) are propagated through each band graph and
//! embedded, giving
//!
//! ```text
//! f'_i = sum_j alpha(i, j) * (S E_j N Z)_i
//! ```
//!
//! which is then concatenated after the original feature.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::layout::ProposalBatch;
use crate::matrix::{row_softmax, Matrix};
use crate::prior::{BandSet, CoOccurrenceGraphSet};

pub const DEFAULT_SIGMA: f64 = 0.3;
pub const DEFAULT_D_PRIME: usize = 512;
pub const DEFAULT_PROPOSALS: usize = 256;

/// How proposals are spread over band graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssociationPolicy {
    /// Gaussian in the normalized vertical displacement to each band centroid.
    Gaussian { mu: f64, sigma: f64 },
    /// All weight on the nearest band centroid; ties go to the lower band.
    Single,
    /// Uniform over bands.
    Equal,
}

impl Default for AssociationPolicy {
    fn default() -> Self {
        AssociationPolicy::Gaussian {
            mu: 0.0,
            sigma: DEFAULT_SIGMA,
        }
    }
}

impl AssociationPolicy {
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::Invalid(format!(
                "gaussian association needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(AssociationPolicy::Gaussian { mu, sigma })
    }
}

/// How class scores become the proposal-to-class mapping `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MappingPolicy {
    /// Row softmax of the logits.
    #[default]
    Soft,
    /// One-hot on the row argmax; ties go to the lower class index.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Classifier head weights including bias, C x (D+1).
    ClassifierWeights,
    /// Class-averaged proposal features, C x D.
    ProposalDerived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    matrix: Matrix,
    kind: NodeKind,
}

impl NodeFeatures {
    pub fn new(matrix: Matrix, kind: NodeKind) -> Self {
        NodeFeatures { matrix, kind }
    }

    pub fn classifier_weights(matrix: Matrix) -> Self {
        NodeFeatures::new(matrix, NodeKind::ClassifierWeights)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    /// Width K of each node vector.
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningConfig {
    pub association: AssociationPolicy,
    pub mapping: MappingPolicy,
    /// Embedding `Z_e`, K x D'.
    pub embed: Matrix,
}

impl ConditioningConfig {
    pub fn new(association: AssociationPolicy, mapping: MappingPolicy, embed: Matrix) -> Self {
        ConditioningConfig {
            association,
            mapping,
            embed,
        }
    }

    pub fn d_prime(&self) -> usize {
        self.embed.cols()
    }

    /// Checks `embed` against the node width.
    pub fn check_nodes(&self, nodes: &NodeFeatures) -> Result<()> {
        if self.embed.rows() != nodes.dim() {
            return Err(Error::shape(
                "nodes x embed",
                nodes.matrix.shape(),
                self.embed.shape(),
            ));
        }
        Ok(())
    }
}

/// Seeded stand-ins for a trained head: classifier weights `W` (C x (D+1))
/// and embedding `Z_e` ((D+1) x D'), scaled like a Xavier initialization.
pub fn random_head(
    n_classes: usize,
    feature_dim: usize,
    d_prime: usize,
    seed: u64,
) -> (NodeFeatures, Matrix) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let k = feature_dim + 1;
    let w = Matrix::random_normal(
        n_classes,
        k,
        (2.0 / (n_classes + k) as f64).sqrt(),
        &mut rng,
    );
    let z = Matrix::random_normal(k, d_prime, (2.0 / (k + d_prime) as f64).sqrt(), &mut rng);
    (NodeFeatures::classifier_weights(w), z)
}

/// Proposal-to-band weights, N_r x N_g, each row summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMatrix {
    alpha: Matrix,
}

impl AssociationMatrix {
    /// Wraps a matrix after checking that it is non-negative and row-stochastic.
    pub fn new(alpha: Matrix) -> Result<Self> {
        for (i, row) in alpha.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "association row {i} is not a distribution"
                )));
            }
        }
        Ok(AssociationMatrix { alpha })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.alpha
    }

    pub fn n_proposals(&self) -> usize {
        self.alpha.rows()
    }

    pub fn n_graphs(&self) -> usize {
        self.alpha.cols()
    }

    pub fn get(&self, proposal: usize, band: usize) -> f64 {
        self.alpha[(proposal, band)]
    }
}

/// Association weights for normalized center heights `y_norm`.
pub fn associate_centers(
    centers: &[f64],
    bands: &BandSet,
    policy: AssociationPolicy,
) -> Result<AssociationMatrix> {
    let n_g = bands.len();
    if n_g == 0 {
        return Err(Error::Invalid("association needs at least one band".into()));
    }
    let mut alpha = Matrix::zeros(centers.len(), n_g);
    for (i, &yc) in centers.iter().enumerate() {
        let row = alpha.row_mut(i);
        match policy {
            AssociationPolicy::Gaussian { mu, sigma } => {
                if sigma.is_nan() || sigma <= 0.0 {
                    return Err(Error::Invalid(format!("sigma {sigma} must be positive")));
                }
                // Log-density, including the normalizing prefactor, then a
                // max-shifted normalization so tiny sigmas do not underflow.
                let log_prefactor = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
                for (a, &yb) in row.iter_mut().zip(bands.centroids()) {
                    let z = (yc - yb - mu) / sigma;
                    *a = log_prefactor - 0.5 * z * z;
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for a in row.iter_mut() {
                    *a = (*a - max).exp();
                    sum += *a;
                }
                for a in row.iter_mut() {
                    *a /= sum;
                }
            }
            AssociationPolicy::Single => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, &yb) in bands.centroids().iter().enumerate() {
                    let d = (yc - yb).abs();
                    if d < best_d {
                        best = j;
                        best_d = d;
                    }
                }
                row[best] = 1.0;
            }
            AssociationPolicy::Equal => row.fill(1.0 / n_g as f64),
        }
    }
    AssociationMatrix::new(alpha)
}

pub fn band_association(
    proposals: &ProposalBatch,
    bands: &BandSet,
    policy: AssociationPolicy,
) -> Result<AssociationMatrix> {
    associate_centers(&proposals.normalized_centers(), bands, policy)
}

/// Proposal-to-class mapping `S` from raw logits.
pub fn soft_mapping(logits: &Matrix, policy: MappingPolicy) -> Matrix {
    match policy {
        MappingPolicy::Soft => row_softmax(logits),
        MappingPolicy::Hard => {
            let mut s = Matrix::zeros(logits.rows(), logits.cols());
            for i in 0..logits.rows() {
                let row = logits.row(i);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                if !row.is_empty() {
                    s[(i, best)] = 1.0;
                }
            }
            s
        }
    }
}

/// Class-averaged proposal features: row c of the result is the mean of
/// the proposal features weighted by column c of `s`. Classes with no mass
/// get a zero row.
pub fn proposal_node_features(features: &Matrix, s: &Matrix) -> Result<NodeFeatures> {
    if features.rows() != s.rows() {
        return Err(Error::shape("S^T x F", s.shape(), features.shape()));
    }
    let mut p = s.transpose().matmul(features)?;
    for c in 0..s.cols() {
        let mass: f64 = (0..s.rows()).map(|i| s[(i, c)]).sum();
        let row = p.row_mut(c);
        if mass > 0.0 {
            row.iter_mut().for_each(|v| *v /= mass);
        } else {
            row.fill(0.0);
        }
    }
    Ok(NodeFeatures::new(p, NodeKind::ProposalDerived))
}

/// Conditioned features F', N_r x D'.
///
/// Per band the product `S E_j N Z` is formed as `S (E_j (N Z))`, with
/// `N Z` computed once; bands are summed in ascending order.
pub fn condition_features(
    s: &Matrix,
    alpha: &AssociationMatrix,
    graphs: &CoOccurrenceGraphSet,
    nodes: &NodeFeatures,
    embed: &Matrix,
) -> Result<Matrix> {
    let n_r = s.rows();
    let c = s.cols();
    if alpha.n_proposals() != n_r {
        return Err(Error::shape(
            "alpha vs S",
            alpha.matrix().shape(),
            s.shape(),
        ));
    }
    if alpha.n_graphs() != graphs.n_graphs() {
        return Err(Error::shape(
            "alpha vs graphs",
            alpha.matrix().shape(),
            (graphs.n_graphs(), c),
        ));
    }
    if nodes.matrix().rows() != c {
        return Err(Error::shape("E_j x nodes", (c, c), nodes.matrix().shape()));
    }
    let node_embed = nodes
        .matrix()
        .matmul(embed)
        .map_err(|e| e.in_op("nodes x embed"))?;
    let mut out = Matrix::zeros(n_r, embed.cols());
    for (j, edges) in graphs.edges.iter().enumerate() {
        let propagated = edges
            .matmul(&node_embed)
            .map_err(|e| e.in_op("E_j x nodes"))?;
        let band = s.matmul(&propagated).map_err(|e| e.in_op("S x E_j"))?;
        for i in 0..n_r {
            let a = alpha.get(i, j);
            for (o, &b) in out.row_mut(i).iter_mut().zip(band.row(i)) {
                *o += a * b;
            }
        }
    }
    Ok(out)
}

/// `[f, f']`, original features first.
pub fn concat_features(f: &Matrix, f_prime: &Matrix) -> Result<Matrix> {
    f.hconcat(f_prime).map_err(|e| e.in_op("concat [f, f']"))
}

/// Runs association, mapping and conditioning for one batch.
pub fn condition_batch(
    proposals: &ProposalBatch,
    graphs: &CoOccurrenceGraphSet,
    nodes: &NodeFeatures,
    config: &ConditioningConfig,
) -> Result<Matrix> {
    if proposals.logits.cols() != graphs.n_classes() {
        return Err(Error::shape(
            "logits vs graphs",
            proposals.logits.shape(),
            (graphs.n_classes(), graphs.n_classes()),
        ));
    }
    config.check_nodes(nodes)?;
    let alpha = band_association(proposals, &graphs.bands(), config.association)?;
    let s = soft_mapping(&proposals.logits, config.mapping);
    condition_features(&s, &alpha, graphs, nodes, &config.embed)
}
