//! ReLU-activated MLPs over exact rationals.
//!
//! An MLP is a chain of affine layers `x -> w x + b`; ReLU is applied after
//! every layer except the last. Besides evaluation this module checks the
//! per-layer output-size inequality
//!
//! ```text
//! <relu(w x + b)>  <=  <b> + d_out * d_in * w_max + d_out * d_in * <x>
//! ```
//!
//! where `w_max` is the largest entry bit-length of `w`, and estimates the
//! output-size complexity of a whole MLP by sampling inputs under a bit budget.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rational::{RVec, Rat};
use crate::sample;

/// One affine layer: `weights` has `out_dim` rows of `in_dim` entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MlpLayer {
    #[serde(rename = "w")]
    weights: Vec<Vec<Rat>>,
    #[serde(rename = "b")]
    bias: RVec,
}

impl MlpLayer {
    pub fn new(weights: Vec<Vec<Rat>>, bias: RVec) -> Result<Self> {
        let layer = MlpLayer { weights, bias };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        let rows = self.weights.len();
        if rows == 0 {
            return Err(LabError::invalid("layer has no weight rows"));
        }
        let cols = self.weights[0].len();
        if cols == 0 {
            return Err(LabError::invalid("layer has zero input dimension"));
        }
        if let Some(row) = self.weights.iter().find(|row| row.len() != cols) {
            return Err(LabError::DimensionMismatch {
                context: "weight row",
                expected: cols,
                got: row.len(),
            });
        }
        if self.bias.dim() != rows {
            return Err(LabError::DimensionMismatch {
                context: "bias",
                expected: rows,
                got: self.bias.dim(),
            });
        }
        Ok(())
    }

    pub fn identity(dim: usize) -> Self {
        let weights = (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { Rat::one() } else { Rat::zero() }).collect())
            .collect();
        MlpLayer { weights, bias: RVec::zeros(dim) }
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        MlpLayer {
            weights: vec![vec![Rat::zero(); in_dim]; out_dim],
            bias: RVec::zeros(out_dim),
        }
    }

    /// Entries with bit-length at most `max_bitlen`.
    pub fn random(rng: &mut impl Rng, in_dim: usize, out_dim: usize, max_bitlen: u32) -> Self {
        let weights = (0..out_dim)
            .map(|_| (0..in_dim).map(|_| sample::rat_with_bitlen_at_most(rng, max_bitlen)).collect())
            .collect();
        let bias = (0..out_dim).map(|_| sample::rat_with_bitlen_at_most(rng, max_bitlen)).collect();
        MlpLayer { weights, bias: RVec::new(bias) }
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Vec<Rat>] {
        &self.weights
    }

    pub fn bias(&self) -> &RVec {
        &self.bias
    }

    /// `w x + b`.
    pub fn affine(&self, x: &RVec) -> Result<RVec> {
        if x.dim() != self.in_dim() {
            return Err(LabError::DimensionMismatch {
                context: "layer input",
                expected: self.in_dim(),
                got: x.dim(),
            });
        }
        let out = self
            .weights
            .iter()
            .zip(self.bias.entries())
            .map(|(row, b)| {
                row.iter()
                    .zip(x.entries())
                    .filter(|(w, _)| !w.is_zero())
                    .fold(b.clone(), |acc, (w, xi)| acc + w * xi)
            })
            .collect();
        Ok(RVec::new(out))
    }

    pub fn max_weight_bitlen(&self) -> u64 {
        self.weights.iter().flatten().map(Rat::bitlen).max().unwrap_or(0)
    }

    /// Right-hand side of the per-layer inequality for an input of
    /// bit-length `input_bitlen`.
    pub fn bound_rhs(&self, input_bitlen: u128) -> u128 {
        let fan = (self.out_dim() * self.in_dim()) as u128;
        (self.bias.bitlen() as u128)
            .saturating_add(fan.saturating_mul(self.max_weight_bitlen() as u128))
            .saturating_add(fan.saturating_mul(input_bitlen))
    }
}

/// Outcome of one per-layer inequality check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBound {
    pub lhs: u64,
    pub rhs: u128,
    pub holds: bool,
}

impl LayerBound {
    fn from_output(layer: &MlpLayer, x: &RVec, out: &RVec) -> Self {
        let lhs = out.bitlen();
        let rhs = layer.bound_rhs(x.bitlen() as u128);
        LayerBound { lhs, rhs, holds: (lhs as u128) <= rhs }
    }
}

/// Checks `<relu(w x + b)> <= <b> + d_out d_in w_max + d_out d_in <x>`.
pub fn layer_bound_check(layer: &MlpLayer, x: &RVec) -> Result<LayerBound> {
    let out = layer.affine(x)?.relu();
    Ok(LayerBound::from_output(layer, x, &out))
}

/// A ReLU MLP with at least one layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MlpSpec {
    layers: Vec<MlpLayer>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    in_dim: usize,
    out_dim: usize,
    layers: Vec<MlpLayer>,
}

impl Serialize for MlpSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MlpFile { in_dim: self.in_dim(), out_dim: self.out_dim(), layers: self.layers.clone() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = MlpFile::deserialize(d)?;
        let spec = MlpSpec::new(file.layers).map_err(serde::de::Error::custom)?;
        if spec.in_dim() != file.in_dim || spec.out_dim() != file.out_dim {
            return Err(serde::de::Error::custom(format!(
                "declared dims {}->{} do not match layers {}->{}",
                file.in_dim,
                file.out_dim,
                spec.in_dim(),
                spec.out_dim()
            )));
        }
        Ok(spec)
    }
}

impl MlpSpec {
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(LabError::invalid("an MLP needs at least one layer"));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(LabError::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(MlpSpec { layers })
    }

    pub fn identity(dim: usize) -> Self {
        MlpSpec { layers: vec![MlpLayer::identity(dim)] }
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        MlpSpec { layers: vec![MlpLayer::zero(in_dim, out_dim)] }
    }

    /// Single linear layer that copies `len` coordinates starting at `offset`.
    pub fn projection(in_dim: usize, offset: usize, len: usize) -> Result<Self> {
        if offset + len > in_dim || len == 0 {
            return Err(LabError::invalid(format!(
                "projection [{offset}, {}) outside input dim {in_dim}",
                offset + len
            )));
        }
        let weights = (0..len)
            .map(|i| {
                (0..in_dim)
                    .map(|j| if j == offset + i { Rat::one() } else { Rat::zero() })
                    .collect()
            })
            .collect();
        MlpLayer::new(weights, RVec::zeros(len)).map(|layer| MlpSpec { layers: vec![layer] })
    }

    /// Layers with widths `dims[0] -> dims[1] -> ...`, entries of bit-length at
    /// most `max_bitlen`.
    pub fn random(rng: &mut impl Rng, dims: &[usize], max_bitlen: u32) -> Result<Self> {
        if dims.len() < 2 {
            return Err(LabError::invalid("random MLP needs at least input and output dims"));
        }
        let layers = dims
            .windows(2)
            .map(|w| MlpLayer::random(rng, w[0], w[1], max_bitlen))
            .collect();
        MlpSpec::new(layers)
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, x: &RVec) -> Result<RVec> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.affine(&h)?;
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Forward pass that also checks the per-layer inequality on every layer,
    /// using each layer's actual input. The last layer is checked on its
    /// affine output, since it carries no activation.
    pub fn forward_audited(&self, x: &RVec) -> Result<(RVec, Vec<LayerBound>)> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut checks = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.affine(&h)?;
            if i < last {
                out = out.relu();
            }
            checks.push(LayerBound::from_output(layer, &h, &out));
            h = out;
        }
        Ok((h, checks))
    }

    /// The per-layer bound composed over all layers, starting from an input
    /// of bit-length `input_bitlen`.
    pub fn composed_bound(&self, input_bitlen: u128) -> u128 {
        self.layers.iter().fold(input_bitlen, |b, layer| layer.bound_rhs(b))
    }
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearFit {
    pub fn fit(points: &[(f64, f64)]) -> Self {
        let n = points.len() as f64;
        if points.is_empty() {
            return LinearFit { slope: 0.0, intercept: 0.0 };
        }
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
        LinearFit { slope, intercept: my - slope * mx }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub budget: u64,
    pub samples: usize,
    pub max_input_bitlen: u64,
    pub max_observed_bitlen: u64,
    /// Composed per-layer bound at `budget`.
    pub analytic_bound: u128,
    /// Samples whose output exceeded the composed bound at their own input size.
    pub bound_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpProbe {
    pub rows: Vec<ProbeRow>,
    pub fit: LinearFit,
}

/// Inputs with bit-length at most `budget`: random odd numerators and
/// denominators with the per-entry budget split evenly, plus the all-max
/// integer corner `2^(e-1) - 1`.
pub fn sample_budget_inputs(
    rng: &mut impl Rng,
    dim: usize,
    budget: u64,
    samples: usize,
) -> Result<Vec<RVec>> {
    let per_entry = budget / dim as u64;
    if per_entry < 2 {
        return Err(LabError::invalid(format!(
            "budget {budget} too small for dimension {dim} (need >= {})",
            2 * dim
        )));
    }
    let per_entry = per_entry.min(62) as u32;
    let num_bits = per_entry / 2;
    let den_bits = per_entry - num_bits;
    let corner = Rat::from_int((1i64 << (per_entry - 1)) - 1);
    let mut inputs = vec![RVec::new(vec![corner; dim])];
    for _ in 0..samples {
        let entries = (0..dim)
            .map(|_| {
                let num = sample::odd_below_pow2(rng, num_bits);
                let num = if rng.gen_bool(0.5) { -num } else { num };
                Rat::new(num, sample::odd_below_pow2(rng, den_bits)).expect("odd denominator")
            })
            .collect();
        inputs.push(RVec::new(entries));
    }
    Ok(inputs)
}

pub fn probe_mlp_complexity(
    mlp: &MlpSpec,
    budgets: &[u64],
    samples_per_budget: usize,
    seed: u64,
) -> Result<MlpProbe> {
    if budgets.is_empty() {
        return Err(LabError::invalid("probe needs at least one budget"));
    }
    let mut rng = sample::rng(seed);
    let mut rows = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let inputs = sample_budget_inputs(&mut rng, mlp.in_dim(), budget, samples_per_budget)?;
        let mut row = ProbeRow {
            budget,
            samples: inputs.len(),
            max_input_bitlen: 0,
            max_observed_bitlen: 0,
            analytic_bound: mlp.composed_bound(budget as u128),
            bound_violations: 0,
        };
        for x in &inputs {
            let size = mlp.forward(x)?.bitlen();
            row.max_input_bitlen = row.max_input_bitlen.max(x.bitlen());
            row.max_observed_bitlen = row.max_observed_bitlen.max(size);
            if size as u128 > mlp.composed_bound(x.bitlen() as u128) {
                row.bound_violations += 1;
            }
        }
        rows.push(row);
    }
    let points: Vec<_> = rows
        .iter()
        .map(|r| (r.budget as f64, r.max_observed_bitlen as f64))
        .collect();
    Ok(MlpProbe { fit: LinearFit::fit(&points), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rat {
        s.parse().unwrap()
    }

    fn layer(w: &[&[&str]], b: &[&str]) -> MlpLayer {
        MlpLayer::new(
            w.iter().map(|row| row.iter().map(|s| r(s)).collect()).collect(),
            RVec::new(b.iter().map(|s| r(s)).collect()),
        )
        .unwrap()
    }

    #[test]
    fn forward_examples() {
        let x = RVec::new(vec![r("3/2")]);
        assert_eq!(MlpSpec::identity(1).forward(&x).unwrap(), x);

        let sum = MlpSpec::new(vec![layer(&[&["1", "1"]], &["0"])]).unwrap();
        assert_eq!(sum.forward(&RVec::ones(2)).unwrap(), RVec::from_ints(&[2]));

        let kill = MlpSpec::new(vec![layer(&[&["-1"]], &["0"]), layer(&[&["1"]], &["0"])]).unwrap();
        assert_eq!(kill.forward(&RVec::from_ints(&[5])).unwrap(), RVec::from_ints(&[0]));
    }

    #[test]
    fn last_layer_has_no_relu() {
        let neg = MlpSpec::new(vec![layer(&[&["-1"]], &["0"])]).unwrap();
        assert_eq!(neg.forward(&RVec::from_ints(&[5])).unwrap(), RVec::from_ints(&[-5]));
    }

    #[test]
    fn dimension_errors() {
        assert!(MlpSpec::identity(2).forward(&RVec::ones(3)).is_err());
        assert!(MlpSpec::new(vec![]).is_err());
        assert!(MlpSpec::new(vec![MlpLayer::identity(2), MlpLayer::identity(3)]).is_err());
        assert!(MlpLayer::new(vec![vec![Rat::one()]], RVec::zeros(2)).is_err());
        assert!(layer_bound_check(&MlpLayer::identity(1), &RVec::ones(2)).is_err());
    }

    #[test]
    fn layer_bound_examples() {
        let id = layer_bound_check(&MlpLayer::identity(1), &RVec::ones(1)).unwrap();
        assert!(id.holds);
        assert_eq!(id.lhs, 2);

        // <15> = 5; rhs = <0> + <3> + <5> = 2 + 3 + 4.
        let triple = layer_bound_check(&layer(&[&["3"]], &["0"]), &RVec::from_ints(&[5])).unwrap();
        assert_eq!(triple, LayerBound { lhs: 5, rhs: 9, holds: true });
    }

    #[test]
    fn per_layer_inequality_fails_for_coprime_denominators() {
        // 1/11 + 1/13 = 24/143: <.> = 5 + 8 = 13, rhs = 5 + 2 + 5 = 12.
        let check = layer_bound_check(&layer(&[&["1"]], &["1/13"]), &RVec::new(vec![r("1/11")]))
            .unwrap();
        assert_eq!(check, LayerBound { lhs: 13, rhs: 12, holds: false });
    }

    #[test]
    fn relu_keeps_or_zeroes_each_entry() {
        let mut rng = sample::rng(3);
        for _ in 0..1000 {
            let v = RVec::new((0..4).map(|_| sample::rat_with_bitlen_at_most(&mut rng, 20)).collect());
            for (before, after) in v.entries().iter().zip(v.relu().entries()) {
                assert!(after.bitlen() == before.bitlen() || after.is_zero());
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut rng = sample::rng(11);
        let mlp = MlpSpec::random(&mut rng, &[3, 4, 2], 12).unwrap();
        let x = RVec::new((0..3).map(|_| sample::rat_with_bitlen_at_most(&mut rng, 12)).collect());
        assert_eq!(mlp.forward(&x).unwrap(), mlp.forward(&x).unwrap());
    }

    #[test]
    fn audited_forward_matches_plain_forward() {
        let mut rng = sample::rng(5);
        let mlp = MlpSpec::random(&mut rng, &[2, 3, 3, 1], 10).unwrap();
        let x = RVec::new(vec![r("7/3"), r("-5/2")]);
        let (y, checks) = mlp.forward_audited(&x).unwrap();
        assert_eq!(y, mlp.forward(&x).unwrap());
        assert_eq!(checks.len(), 3);
    }

    #[test]
    fn probe_identity_and_zero() {
        let id = probe_mlp_complexity(&MlpSpec::identity(2), &[8, 16, 32], 20, 1).unwrap();
        for row in &id.rows {
            assert_eq!(row.max_observed_bitlen, row.max_input_bitlen);
            assert!(row.max_input_bitlen <= row.budget);
        }
        let zero = probe_mlp_complexity(&MlpSpec::zero(2, 3), &[8, 16], 20, 1).unwrap();
        assert!(zero.rows.iter().all(|row| row.max_observed_bitlen == 6));
        assert!(zero.fit.slope.abs() < 1e-12);
    }

    #[test]
    fn probe_rejects_bad_budgets() {
        assert!(probe_mlp_complexity(&MlpSpec::identity(1), &[], 4, 0).is_err());
        assert!(probe_mlp_complexity(&MlpSpec::identity(3), &[5], 4, 0).is_err());
    }

    #[test]
    fn sampled_inputs_respect_budget() {
        let mut rng = sample::rng(9);
        for budget in [4u64, 9, 16, 33, 64] {
            for x in sample_budget_inputs(&mut rng, 2, budget, 50).unwrap() {
                assert!(x.bitlen() <= budget, "{x} exceeds {budget}");
            }
        }
    }

    #[test]
    fn file_format_round_trip() {
        let text = r#"{"in_dim":2,"out_dim":1,"layers":[{"w":[["1","-3/2"]],"b":["7"]}]}"#;
        let mlp: MlpSpec = serde_json::from_str(text).unwrap();
        assert_eq!(serde_json::to_string(&mlp).unwrap(), text);
        let bad = r#"{"in_dim":3,"out_dim":1,"layers":[{"w":[["1","-3/2"]],"b":["7"]}]}"#;
        assert!(serde_json::from_str::<MlpSpec>(bad).is_err());
        let zero_den = r#"{"in_dim":1,"out_dim":1,"layers":[{"w":[["1/0"]],"b":["7"]}]}"#;
        assert!(serde_json::from_str::<MlpSpec>(zero_den).is_err());
    }
}
