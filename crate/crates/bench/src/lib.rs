//! Fixtures shared by the criterion benches.

use maskdiff::{make_template_dataset, NoiseSchedule, TemplateSet, TemplateSpec};

/// The 4x4, K=8, 16-template set used by the trend experiments.
pub fn grid_fixture(steps: usize) -> (TemplateSet, NoiseSchedule) {
    let spec = TemplateSpec {
        k: 8,
        h: 4,
        w: 4,
        n_templates: 16,
        n_classes: 2,
        seed: 16,
        constant_position: false,
    };
    let ts = make_template_dataset(&spec).expect("fixture spec is valid");
    let schedule = NoiseSchedule::linear(steps, 8, 0.0).expect("fixture schedule is valid");
    (ts, schedule)
}
