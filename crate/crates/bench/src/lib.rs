//! Shared fixtures for the benchmarks.

use canonvo::keyframe::Keyframe;
use canonvo::se3::Twist;
use canonvo::synthetic::{render_frame, IlluminationCondition, RenderedFrame, SceneSpec};
use canonvo::tracker::TrackerConfig;

/// Two consecutive frames of the synthetic desk scene at 256×192 and a
/// keyframe built from the first.
pub struct Fixture {
    pub spec: SceneSpec,
    pub reference: RenderedFrame,
    pub live: RenderedFrame,
    pub keyframe: Keyframe,
    pub config: TrackerConfig,
}

pub fn desk_fixture() -> Fixture {
    let spec = SceneSpec::desk(2, 1);
    let reference = render_frame(&spec, &IlluminationCondition::Static, 0).expect("desk renders");
    let live = render_frame(&spec, &IlluminationCondition::Static, 1).expect("desk renders");
    let config = TrackerConfig::default();
    let keyframe = Keyframe::new(
        0,
        reference.pose,
        &reference.frame_id,
        &reference.image,
        &reference.depth,
        &spec.intrinsics,
        &config.default_keyframe_params(),
    )
    .expect("valid keyframe");
    Fixture {
        spec,
        reference,
        live,
        keyframe,
        config,
    }
}

/// A generic twist with every component non-zero.
pub fn sample_twist() -> Twist {
    let mut xi = Twist::zero();
    for (i, v) in [0.03, -0.01, 0.02, 0.2, -0.4, 0.1].into_iter().enumerate() {
        xi.0[i] = v;
    }
    xi
}
