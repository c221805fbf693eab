use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Layer, Stack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Medical,
    Mnist,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "medical" => Ok(Preset::Medical),
            "mnist" => Ok(Preset::Mnist),
            other => Err(Error::Config(format!("unknown preset {other:?}, expected medical or mnist"))),
        }
    }
}

/// Layer widths of a conv primary followed by a fully-connected head.
///
/// Every conv layer is a valid `kernel x kernel` convolution with ReLU; every
/// hidden FC layer has ReLU; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// `[C, H, W]` of one input sample.
    pub input: [usize; 3],
    pub conv: Vec<usize>,
    pub kernel: usize,
    pub fc: Vec<usize>,
    pub outputs: usize,
}

impl ArchitectureSpec {
    /// 3x9x9 patches through conv 64, 32 and FC 60, 40 to two outputs.
    pub fn medical() -> Self {
        ArchitectureSpec {
            input: [3, 9, 9],
            conv: vec![64, 32],
            kernel: 3,
            fc: vec![60, 40],
            outputs: 2,
        }
    }

    /// 1x28x28 digits through conv 64, 32 and FC 200, 100 to two outputs.
    pub fn mnist() -> Self {
        ArchitectureSpec {
            input: [1, 28, 28],
            conv: vec![64, 32],
            kernel: 3,
            fc: vec![200, 100],
            outputs: 2,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Medical => Self::medical(),
            Preset::Mnist => Self::mnist(),
        }
    }

    pub fn with_outputs(mut self, outputs: usize) -> Self {
        self.outputs = outputs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self.input.iter().chain(&self.conv).chain(&self.fc).chain([&self.outputs, &self.kernel]);
        if widths.clone().any(|&w| w == 0) {
            return Err(Error::Architecture(format!("zero width in {self:?}")));
        }
        let shrink = self.conv.len() * (self.kernel - 1);
        if self.input[1] <= shrink || self.input[2] <= shrink {
            return Err(Error::Architecture(format!(
                "{} convolutions of size {} do not fit a {}x{} input",
                self.conv.len(),
                self.kernel,
                self.input[1],
                self.input[2]
            )));
        }
        Ok(())
    }

    /// `[C, H, W]` of the last conv output.
    pub fn primary_output(&self) -> [usize; 3] {
        let shrink = self.conv.len() * (self.kernel - 1);
        [
            self.conv.last().copied().unwrap_or(self.input[0]),
            self.input[1] - shrink,
            self.input[2] - shrink,
        ]
    }

    pub fn flatten_size(&self) -> usize {
        self.primary_output().iter().product()
    }

    /// Shared primary layers with zero weights.
    pub fn primary_layers(&self) -> Vec<Layer<f32>> {
        let mut in_c = self.input[0];
        self.conv
            .iter()
            .map(|&out_c| {
                let l = Layer::conv2d(in_c, out_c, self.kernel, true);
                in_c = out_c;
                l
            })
            .collect()
    }

    /// Head layers with zero weights.
    pub fn head_layers(&self) -> Vec<Layer<f32>> {
        let mut units = self.flatten_size();
        let mut layers: Vec<Layer<f32>> = self
            .fc
            .iter()
            .map(|&out| {
                let l = Layer::dense(units, out, true);
                units = out;
                l
            })
            .collect();
        layers.push(Layer::dense(units, self.outputs, false));
        layers
    }

    /// He-initialized `(primary, head)` from one seeded stream.
    pub fn init(&self, seed: u64) -> Result<(Stack<f32>, Stack<f32>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut primary = self.primary_layers();
        let mut head = self.head_layers();
        for l in primary.iter_mut().chain(head.iter_mut()) {
            l.he_init(&mut rng);
        }
        Ok((Stack::new(primary), Stack::new(head)))
    }

    pub fn primary_params(&self) -> usize {
        Stack::new(self.primary_layers()).param_count()
    }

    pub fn head_params(&self) -> usize {
        Stack::new(self.head_layers()).param_count()
    }

    pub fn network_params(&self) -> usize {
        self.primary_params() + self.head_params()
    }
}
