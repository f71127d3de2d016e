use std::hint::black_box;

use canonvo::camera::StereoModel;
use canonvo::imaging::{block_match_disparity, build_pyramid};
use canonvo::se3::Twist;
use canonvo::tracker::{compute_residuals, track_frame, TrackingFrame};
use canonvo_bench::{desk_fixture, sample_twist};
use criterion::{criterion_group, criterion_main, Criterion};

fn se3(c: &mut Criterion) {
    let xi: Twist = sample_twist();
    let pose = xi.exp();
    c.bench_function("se3_exp", |b| b.iter(|| black_box(&xi).exp()));
    c.bench_function("se3_log", |b| b.iter(|| black_box(&pose).log()));
    c.bench_function("se3_compose", |b| b.iter(|| *black_box(&pose) * *black_box(&pose)));
}

fn imaging(c: &mut Criterion) {
    let f = desk_fixture();
    let gray = f.live.image.to_luminance();
    c.bench_function("pyramid_4_levels_256x192", |b| {
        b.iter(|| build_pyramid(black_box(&gray), &f.spec.intrinsics, 4).unwrap())
    });
    let stereo = StereoModel::new(f.spec.intrinsics, 0.1).unwrap();
    let left = f.reference.image.to_luminance();
    let right = f.live.image.to_luminance();
    c.bench_function("block_match_256x192_w7_d32", |b| {
        b.iter(|| block_match_disparity(black_box(&left), black_box(&right), &stereo, 7, 32).unwrap())
    });
}

fn tracking(c: &mut Criterion) {
    let f = desk_fixture();
    let frame = TrackingFrame::new(&f.live.image, &f.spec.intrinsics, &f.config).unwrap();
    let truth = f.live.pose.inverse() * f.reference.pose;
    c.bench_function("residuals_finest_level", |b| {
        b.iter(|| compute_residuals(&f.keyframe, &frame, black_box(&truth), 0, &f.config).unwrap())
    });
    let start = canonvo::se3::Pose::identity();
    c.bench_function("track_frame_256x192", |b| {
        b.iter(|| track_frame(&f.keyframe, black_box(&f.live.image), &start, &f.config).unwrap())
    });
}

criterion_group!(benches, se3, imaging, tracking);
criterion_main!(benches);
