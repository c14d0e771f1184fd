#![allow(dead_code)]

use lanescene::encoders::EncoderConfig;
use lanescene::model::ModelConfig;
use lanescene::scene::{
    AgentKind, AgentState, AgentTrack, LaneKind, LanePolyline, Scene, SignalState, DT,
    HISTORY_FRAMES,
};

/// Constant-velocity history ending at `end`.
pub fn track(id: i64, end: [f64; 2], heading: f64, speed: f64) -> AgentTrack {
    let (s, c) = heading.sin_cos();
    let states = (0..HISTORY_FRAMES)
        .map(|k| {
            let back = speed * DT * (HISTORY_FRAMES - 1 - k) as f64;
            AgentState {
                x: end[0] - c * back,
                y: end[1] - s * back,
                z: 0.0,
                vx: c * speed,
                vy: s * speed,
                theta: heading,
                valid: true,
            }
        })
        .collect();
    AgentTrack {
        id,
        kind: AgentKind::Vehicle,
        states,
        size: [4.5, 2.0, 1.5],
        future: None,
    }
}

pub fn lane(id: i64, pts: Vec<[f64; 2]>) -> LanePolyline {
    LanePolyline {
        id,
        kind: LaneKind::SurfaceStreet,
        signal: SignalState::Unknown,
        waypoints: pts,
        successors: vec![],
        predecessors: vec![],
        left_neighbors: vec![],
        right_neighbors: vec![],
    }
}

pub fn scene(agents: Vec<AgentTrack>, lanes: Vec<LanePolyline>) -> Scene {
    Scene {
        scene_id: "hand-built".into(),
        agents,
        lanes,
    }
}

pub fn small_model_config(radius: f64) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            hidden_dim: 16,
            type_embed_dim: 8,
            ..Default::default()
        },
        heads: 4,
        decoder_hidden: 32,
        radius,
        ..Default::default()
    }
}
