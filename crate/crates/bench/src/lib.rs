//! Shared fixtures for the benchmarks.

use bifnet_core::bifurcated::{ArchitectureSpec, MergedModel, Network};
use bifnet_core::dataset::{synth_generate, ChannelMode, MaskedDataset, SyntheticSpec};
use bifnet_core::tensor::Tensor;

/// Deterministic values in `[-1, 1)` without a random number generator.
pub fn ramp(shape: &[usize]) -> Tensor<f32> {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|i| ((i * 7919) % 2000) as f32 / 1000.0 - 1.0).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// One synthetic image per class.
pub fn images() -> MaskedDataset {
    synth_generate(&SyntheticSpec::default(), 1, 7).expect("default synthetic spec")
}

/// Untrained merged medical model with `classes` heads per branch, marked
/// trained so inference runs.
pub fn merged_model(classes: usize) -> MergedModel {
    let nets: Vec<Network> = (0..classes)
        .map(|c| {
            Network::new(
                ArchitectureSpec::medical(),
                vec!["normal".into(), format!("class{c}")],
                Some(ChannelMode::Wce),
                1,
            )
            .expect("medical preset is valid")
        })
        .collect();
    let refs: Vec<&Network> = nets.iter().collect();
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    let mut model = MergedModel::from_separate(&refs, names).expect("identical architectures");
    model.trained = true;
    model
}
