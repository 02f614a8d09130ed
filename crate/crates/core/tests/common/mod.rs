//! Small trained backbone and shifted trajectories shared by integration tests.

#![allow(dead_code)]

use trajtta::backbone::{build_backbone, train_backbone, ArchConfig, AugmentConfig, Backbone, BackboneWeights, TrainConfig};
use trajtta::recon::{reconstruct, ForwardOperator, ReconConfig, ReferenceDenoiser, Trajectory};
use trajtta::volume::{generate_synthetic_case, PhantomConfig, SegmentationMask, ShiftConfig, SyntheticCase};

pub const SIZE: usize = 32;

pub fn phantom(shift: Option<ShiftConfig>) -> PhantomConfig {
    PhantomConfig {
        height: SIZE,
        width: SIZE,
        radius_min: 0.1,
        radius_max: 0.2,
        shift,
        ..Default::default()
    }
}

pub fn arch() -> ArchConfig {
    ArchConfig {
        height: SIZE,
        width: SIZE,
        base_width: 4,
        max_width: 8,
        depth: 2,
        ..Default::default()
    }
}

pub fn cases(seeds: std::ops::Range<u64>, shift: Option<ShiftConfig>) -> Vec<SyntheticCase> {
    let cfg = phantom(shift);
    seeds.map(|s| generate_synthetic_case(s, &cfg).unwrap()).collect()
}

pub fn train(steps: usize) -> (Backbone, BackboneWeights) {
    let (bb, _) = build_backbone(&arch()).unwrap();
    let data: Vec<_> = cases(0..40, None).into_iter().map(|c| (c.clean, c.mask)).collect();
    let cfg = TrainConfig {
        steps,
        augment: AugmentConfig {
            flip: false,
            max_shift: 0,
            contrast: 0.0,
            brightness: 0.0,
            noise_std: 0.0,
        },
        ..Default::default()
    };
    let (w, _) = train_backbone(&bb, bb.init_weights(1), &data, &cfg).unwrap();
    (bb, w)
}

pub fn trajectories(cases: &[SyntheticCase], steps: usize) -> Vec<Trajectory> {
    let op = ForwardOperator::from_id("identity").unwrap();
    let cfg = ReconConfig {
        steps,
        ..Default::default()
    };
    cases
        .iter()
        .map(|c| {
            let den = ReferenceDenoiser::new(&c.measurement, &op, cfg.horizon).unwrap();
            reconstruct(&c.case_id, &c.measurement, &op, &den, &cfg).unwrap()
        })
        .collect()
}

pub fn shift() -> Option<ShiftConfig> {
    Some(ShiftConfig {
        gain: 0.9,
        offset: 0.05,
        noise_std: 0.12,
        ..Default::default()
    })
}

pub fn masks(cases: &[SyntheticCase]) -> Vec<SegmentationMask> {
    cases.iter().map(|c| c.mask.clone()).collect()
}
