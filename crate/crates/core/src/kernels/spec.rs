use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Leaf kernel family with its structural (non-optimized) configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// `σ² exp(−Σ_j (x_j − x'_j)² / ℓ_j)`; the length parameters divide the
    /// squared distance directly.
    ArdSe,
    /// `σ² exp(−2 sin²(π r / p) / ℓ²)` with `r = ‖x − x'‖`.
    Periodic,
    /// Arcsine kernel of an infinitely wide single-hidden-layer network.
    NeuralNet,
    /// Arc-cosine kernel of order `order`, composed `layers` times.
    ArcCosine { order: u32, layers: u32 },
}

impl KernelFamily {
    pub fn param_count(&self, input_dim: usize) -> usize {
        match self {
            KernelFamily::ArdSe | KernelFamily::NeuralNet => input_dim + 1,
            KernelFamily::Periodic => 3,
            KernelFamily::ArcCosine { .. } => 0,
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            KernelFamily::ArdSe => "ard_se",
            KernelFamily::Periodic => "periodic",
            KernelFamily::NeuralNet => "neural_net",
            KernelFamily::ArcCosine { .. } => "arc_cosine",
        }
    }
}

/// Declarative kernel: a leaf family or a sum/product of sub-kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelNode", into = "KernelNode")]
pub enum KernelSpec {
    Leaf { family: KernelFamily, input_dim: usize },
    Sum(Vec<KernelSpec>),
    Product(Vec<KernelSpec>),
}

impl KernelSpec {
    pub fn ard_se(input_dim: usize) -> Self {
        KernelSpec::Leaf { family: KernelFamily::ArdSe, input_dim }
    }

    pub fn periodic(input_dim: usize) -> Self {
        KernelSpec::Leaf { family: KernelFamily::Periodic, input_dim }
    }

    pub fn neural_net(input_dim: usize) -> Self {
        KernelSpec::Leaf { family: KernelFamily::NeuralNet, input_dim }
    }

    pub fn arc_cosine(input_dim: usize, order: u32, layers: u32) -> Self {
        KernelSpec::Leaf { family: KernelFamily::ArcCosine { order, layers }, input_dim }
    }

    pub fn sum(children: Vec<KernelSpec>) -> Self {
        KernelSpec::Sum(children)
    }

    pub fn product(children: Vec<KernelSpec>) -> Self {
        KernelSpec::Product(children)
    }

    /// Number of continuous (log-domain) kernel parameters.
    pub fn param_count(&self) -> usize {
        match self {
            KernelSpec::Leaf { family, input_dim } => family.param_count(*input_dim),
            KernelSpec::Sum(c) | KernelSpec::Product(c) => c.iter().map(|k| k.param_count()).sum(),
        }
    }

    /// Checks the tree and returns its common input dimension.
    pub fn input_dim(&self) -> Result<usize> {
        match self {
            KernelSpec::Leaf { family, input_dim } => {
                if *input_dim == 0 {
                    return invalid("kernel leaf input_dim must be positive");
                }
                match family {
                    KernelFamily::ArcCosine { layers: 0, .. } => {
                        return invalid("arc-cosine kernel needs at least one layer");
                    }
                    // exp-sine-squared of a Euclidean distance is not PSD beyond one dimension.
                    KernelFamily::Periodic if *input_dim != 1 => {
                        return invalid("periodic kernel takes scalar inputs (input_dim = 1)");
                    }
                    _ => {}
                }
                Ok(*input_dim)
            }
            KernelSpec::Sum(children) | KernelSpec::Product(children) => {
                let (first, rest) = children
                    .split_first()
                    .ok_or_else(|| Error::InvalidArgument("composite kernel node has no children".into()))?;
                let d = first.input_dim()?;
                for child in rest {
                    let dc = child.input_dim()?;
                    if dc != d {
                        return invalid(format!("kernel leaves disagree on input_dim ({d} vs {dc})"));
                    }
                }
                Ok(d)
            }
        }
    }

    /// Human-readable names for each log-domain parameter, in layout order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.param_count());
        let mut leaf = 0usize;
        self.collect_names(&mut leaf, &mut names);
        names
    }

    fn collect_names(&self, leaf: &mut usize, out: &mut Vec<String>) {
        match self {
            KernelSpec::Leaf { family, input_dim } => {
                let prefix = format!("{}{}", family.tag(), leaf);
                *leaf += 1;
                match family {
                    KernelFamily::ArdSe => {
                        out.push(format!("{prefix}.log_signal_var"));
                        out.extend((0..*input_dim).map(|j| format!("{prefix}.log_length{j}")));
                    }
                    KernelFamily::Periodic => {
                        out.push(format!("{prefix}.log_signal_var"));
                        out.push(format!("{prefix}.log_length"));
                        out.push(format!("{prefix}.log_period"));
                    }
                    KernelFamily::NeuralNet => {
                        out.extend((0..=*input_dim).map(|j| format!("{prefix}.log_sigma{j}")));
                    }
                    KernelFamily::ArcCosine { .. } => {}
                }
            }
            KernelSpec::Sum(c) | KernelSpec::Product(c) => {
                for child in c {
                    child.collect_names(leaf, out);
                }
            }
        }
    }

    /// Log-domain starting point with every positive quantity equal to one.
    pub fn unit_params(&self) -> HyperParamVector {
        HyperParamVector(vec![0.0; self.param_count()])
    }
}

/// Hyper-parameters stored as logarithms of positive quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct HyperParamVector(Vec<f64>);

impl HyperParamVector {
    pub fn from_log(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("hyper-parameter {i} is not finite"));
        }
        Ok(Self(values))
    }

    /// Builds the vector from positive natural-scale values.
    pub fn from_natural(values: &[f64]) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return invalid(format!("hyper-parameter {i} must be finite and positive, got {}", values[i]));
        }
        Self::from_log(values.iter().map(|v| v.ln()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn natural(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.exp()).collect()
    }
}

impl TryFrom<Vec<f64>> for HyperParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_log(v)
    }
}

impl From<HyperParamVector> for Vec<f64> {
    fn from(h: HyperParamVector) -> Self {
        h.0
    }
}

impl AsRef<[f64]> for HyperParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for HyperParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

// Wire form of `KernelSpec`. Leaves carry `family` + `input_dim` (+ `q`,
// `layers` for arc-cosine); internal nodes carry `op` + `children`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    op: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<KernelNode>,
}

impl TryFrom<KernelNode> for KernelSpec {
    type Error = KernelSpecError;

    fn try_from(node: KernelNode) -> std::result::Result<Self, KernelSpecError> {
        match (node.family, node.op) {
            (Some(_), Some(_)) => Err(KernelSpecError("a kernel node has both `family` and `op`".into())),
            (None, None) => Err(KernelSpecError("a kernel node needs `family` or `op`".into())),
            (Some(family), None) => {
                if !node.children.is_empty() {
                    return Err(KernelSpecError(format!("leaf `{family}` cannot have children")));
                }
                let input_dim = node
                    .input_dim
                    .ok_or_else(|| KernelSpecError(format!("leaf `{family}` is missing `input_dim`")))?;
                let family = match family.as_str() {
                    "ard_se" => KernelFamily::ArdSe,
                    "periodic" => KernelFamily::Periodic,
                    "neural_net" => KernelFamily::NeuralNet,
                    "arc_cosine" => KernelFamily::ArcCosine {
                        order: node.q.unwrap_or(0),
                        layers: node.layers.unwrap_or(1),
                    },
                    other => return Err(KernelSpecError(format!("unknown kernel family `{other}`"))),
                };
                if !matches!(family, KernelFamily::ArcCosine { .. }) && (node.q.is_some() || node.layers.is_some()) {
                    return Err(KernelSpecError("`q` and `layers` only apply to arc_cosine".into()));
                }
                Ok(KernelSpec::Leaf { family, input_dim })
            }
            (None, Some(op)) => {
                if node.children.is_empty() {
                    return Err(KernelSpecError(format!("`{op}` node has no children")));
                }
                let children = node
                    .children
                    .into_iter()
                    .map(KernelSpec::try_from)
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                match op.as_str() {
                    "sum" => Ok(KernelSpec::Sum(children)),
                    "product" => Ok(KernelSpec::Product(children)),
                    other => Err(KernelSpecError(format!("unknown kernel op `{other}`"))),
                }
            }
        }
    }
}

impl From<KernelSpec> for KernelNode {
    fn from(spec: KernelSpec) -> Self {
        match spec {
            KernelSpec::Leaf { family, input_dim } => {
                let (q, layers) = match family {
                    KernelFamily::ArcCosine { order, layers } => (Some(order), Some(layers)),
                    _ => (None, None),
                };
                KernelNode {
                    family: Some(family.tag().to_string()),
                    input_dim: Some(input_dim),
                    q,
                    layers,
                    ..Default::default()
                }
            }
            KernelSpec::Sum(c) => composite_node("sum", c),
            KernelSpec::Product(c) => composite_node("product", c),
        }
    }
}

fn composite_node(op: &str, children: Vec<KernelSpec>) -> KernelNode {
    KernelNode {
        op: Some(op.to_string()),
        children: children.into_iter().map(KernelNode::from).collect(),
        ..Default::default()
    }
}

#[derive(Debug)]
pub struct KernelSpecError(String);

impl fmt::Display for KernelSpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for KernelSpecError {}
