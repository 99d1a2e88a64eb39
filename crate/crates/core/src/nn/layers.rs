use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, ConvGeom, Float, Graph, ParamSet, Var};
use crate::error::Result;

/// Weight initialisation for a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    Kaiming,
    /// `N(0, std²)`.
    Normal(f64),
}

/// Indices of a convolution's tensors inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: Option<usize>,
    pub geom: ConvGeom,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin * geom.kernel * geom.kernel) as f64;
        let std = match init {
            Init::Kaiming => (2.0 / fan_in).sqrt(),
            Init::Normal(s) => s,
        };
        let weight = ps.push_normal(format!("{name}.weight"), &[cout, cin, geom.kernel, geom.kernel], std, rng);
        let bias = bias.then(|| ps.push_zeros(format!("{name}.bias"), &[cout]));
        ConvLayer { weight, bias, geom }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.get(self.weight), self.bias.map(|b| p.get(b)), self.geom)
    }
}
