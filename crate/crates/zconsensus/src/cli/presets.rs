//! Embedded scenario presets.
//!
//! Each preset is an ordinary [`RunConfig`] (exportable with `presets show`);
//! a group preset names a family of runs executed together into
//! subdirectories. Every preset validates at registry construction, which is
//! exercised by a test.

use super::config::{
    ControlSection, ExpectSection, IcSection, KernelSection, ModelSection, RankSection, RunConfig,
    SimSection,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum Preset {
    Single(RunConfig),
    /// Member preset names, each resolvable in the registry.
    Group(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct PresetEntry {
    pub name: String,
    pub summary: String,
    pub preset: Preset,
}

fn base(order: usize, agents: usize, dim: usize) -> ModelSection {
    ModelSection { order, agents, dim }
}

fn hk(alpha: f64, skew: f64) -> KernelSection {
    KernelSection { family: "smoothed_hk".into(), alpha: Some(alpha), strength: None, decay: None, skew }
}

fn cs(strength: f64, decay: f64) -> KernelSection {
    KernelSection {
        family: "cucker_smale".into(),
        alpha: None,
        strength: Some(strength),
        decay: Some(decay),
        skew: 0.0,
    }
}

fn sim(dt: f64, t_end: f64, record_every: usize, seed: u64) -> SimSection {
    SimSection { dt, t_end, record_every, seed, solve_every_stage: true }
}

fn direct(lambda: f64) -> Option<ControlSection> {
    Some(ControlSection { law: "direct".into(), lambda: Some(lambda), mode: None })
}

fn indirect(mode: &str, lambda: f64) -> Option<ControlSection> {
    Some(ControlSection { law: "indirect".into(), lambda: Some(lambda), mode: Some(mode.into()) })
}

fn boxes(b: &[[f64; 2]]) -> Option<IcSection> {
    Some(IcSection { boxes: b.to_vec() })
}

fn expect(description: &str, threshold: f64, converges: bool) -> Option<ExpectSection> {
    Some(ExpectSection {
        description: Some(description.into()),
        threshold: Some(threshold),
        converges: Some(converges),
    })
}

fn config(
    model: ModelSection,
    kernel: KernelSection,
    sim: SimSection,
    control: Option<ControlSection>,
    ic: Option<IcSection>,
    expect: Option<ExpectSection>,
) -> Preset {
    Preset::Single(RunConfig {
        model: Some(model),
        kernel: Some(kernel),
        sim: Some(sim),
        control,
        ic,
        expect,
        rank: None,
    })
}

/// The embedded registry, in display order.
pub fn registry() -> Vec<PresetEntry> {
    let mut entries = Vec::new();
    let mut push = |name: &str, summary: &str, preset| {
        entries.push(PresetEntry { name: name.into(), summary: summary.into(), preset });
    };

    // first-order opinion dynamics, smoothed HK kernel, N = 10, d = 2
    let hk_ic = boxes(&[[-4.0, 4.0]]);
    // with the shipped initial spread, consensus emerges for the two softer
    // kernels and fragments for the two sharper ones
    let alphas: [(&str, f64, bool); 4] = [
        ("hk_0.1", 0.1, true),
        ("hk_1.6", 1.6, true),
        ("hk_5", 5.0, false),
        ("hk_300", 300.0, false),
    ];
    for (name, alpha, converges) in alphas {
        push(
            &format!("{name}_uncontrolled"),
            &format!("uncontrolled smoothed-HK opinions, alpha = {alpha}"),
            config(
                base(1, 10, 2),
                hk(alpha, 0.2),
                sim(1e-3, 20.0, 20, 1),
                None,
                hk_ic.clone(),
                Some(ExpectSection {
                    description: Some(if converges {
                        "opinion consensus without control".into()
                    } else {
                        "clusters persist: no consensus by t = 20".into()
                    }),
                    threshold: Some(1e-6),
                    converges: Some(converges),
                }),
            ),
        );
        push(
            &format!("{name}_direct"),
            &format!("direct Z-control on smoothed-HK opinions, alpha = {alpha}"),
            config(
                base(1, 10, 2),
                hk(alpha, 0.2),
                sim(1e-3, 20.0, 20, 1),
                direct(1.0),
                hk_ic.clone(),
                expect("direct control forces consensus at rate 2*lambda", 1e-6, true),
            ),
        );
    }
    push(
        "hk_alpha_sweep",
        "smoothed-HK regimes: alpha in {0.1, 1.6, 5, 300}, uncontrolled and direct",
        Preset::Group(
            [
                "hk_0.1_uncontrolled",
                "hk_0.1_direct",
                "hk_1.6_uncontrolled",
                "hk_1.6_direct",
                "hk_5_uncontrolled",
                "hk_5_direct",
                "hk_300_uncontrolled",
                "hk_300_direct",
            ]
            .map(String::from)
            .to_vec(),
        ),
    );
    push(
        "hk_direct",
        "direct Z-control decay benchmark (alpha = 1.6, lambda = 1)",
        config(
            base(1, 10, 2),
            hk(1.6, 0.2),
            sim(1e-3, 12.0, 10, 1),
            direct(1.0),
            boxes(&[[-2.0, 2.0]]),
            expect("log Gamma slope = -2*lambda; Gamma <= 1e-8 once lambda*t >= 10", 1e-8, true),
        ),
    );

    // second-order Cucker-Smale, N = 10, d = 2
    push(
        "cs2_uncontrolled_smooth",
        "second-order Cucker-Smale, weak decay (beta = 0.1): natural velocity consensus",
        config(
            base(2, 10, 2),
            cs(1.0, 0.1),
            sim(1e-3, 50.0, 50, 2),
            None,
            boxes(&[[-5.0, 5.0], [-1.0, 1.0]]),
            expect("velocity consensus by t = 50", 1e-6, true),
        ),
    );
    push(
        "cs2_uncontrolled",
        "second-order Cucker-Smale, beta = 1, dispersed flock: no natural consensus",
        config(
            base(2, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 20.0, 20, 2),
            None,
            boxes(&[[-20.0, 20.0], [-1.0, 1.0]]),
            expect("no velocity consensus by t = 20", 1e-4, false),
        ),
    );
    push(
        "cs2_direct",
        "second-order Cucker-Smale with direct Z-control on the accelerations",
        config(
            base(2, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 20.0, 20, 2),
            direct(1.0),
            boxes(&[[-20.0, 20.0], [-1.0, 1.0]]),
            expect("velocity consensus at rate 2*lambda", 1e-6, true),
        ),
    );
    push(
        "cs2_indirect_pos",
        "second-order Cucker-Smale, indirect Z-control through the position equation",
        config(
            base(2, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 15.0, 15, 2),
            indirect("vel_via_pos", 1.0),
            boxes(&[[-2.0, 2.0], [-1.0, 1.0]]),
            expect("velocity consensus driven by position-level inputs", 1e-6, true),
        ),
    );

    // third-order model, N = 10, d = 2. The indirect pair shares a tight
    // initial spread: the velocity-channel law feeds the control into the
    // velocity equation, and a wide initial spread makes the transient input
    // disperse the flock before the acceleration error can close.
    let cs3_ic = boxes(&[[-1.0, 1.0], [-0.1, 0.1], [-0.1, 0.1]]);
    push(
        "cs3_uncontrolled",
        "third-order Cucker-Smale, beta = 1: no natural acceleration consensus",
        config(
            base(3, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 20.0, 20, 3),
            None,
            boxes(&[[-20.0, 20.0], [-1.0, 1.0], [-1.0, 1.0]]),
            expect("no acceleration consensus by t = 20", 1e-4, false),
        ),
    );
    push(
        "cs3_direct",
        "third-order Cucker-Smale with direct Z-control on the jerk equation",
        config(
            base(3, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 20.0, 20, 3),
            direct(1.0),
            boxes(&[[-20.0, 20.0], [-1.0, 1.0], [-1.0, 1.0]]),
            expect("acceleration consensus at rate 2*lambda", 1e-6, true),
        ),
    );
    push(
        "cs3_indirect_pos",
        "third-order Cucker-Smale, indirect Z-control through the position equation",
        config(
            base(3, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 15.0, 15, 3),
            indirect("acc_via_pos", 1.0),
            cs3_ic.clone(),
            expect("acceleration consensus; position inputs stay finite but nonzero", 1e-6, true),
        ),
    );
    push(
        "cs3_indirect_vel",
        "third-order Cucker-Smale, indirect Z-control through the velocity equation",
        config(
            base(3, 10, 2),
            cs(1.0, 1.0),
            sim(1e-3, 15.0, 15, 3),
            indirect("acc_via_vel", 1.0),
            cs3_ic.clone(),
            expect("acceleration consensus; velocity inputs shrink through the transient", 1e-6, true),
        ),
    );

    push(
        "rank_table",
        "numerical rank of the indirect block system at random states (N = 150)",
        Preset::Single(RunConfig {
            model: None,
            kernel: None,
            sim: None,
            control: None,
            ic: None,
            expect: None,
            rank: Some(RankSection { agents: 150, dims: vec![3, 4, 5, 10, 20, 30], seed: 0 }),
        }),
    );

    entries
}

pub fn find(name: &str) -> Result<PresetEntry> {
    registry()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))
}

/// Resolve a preset into named run configs (one entry for a single preset,
/// several for a group).
pub fn resolve(name: &str) -> Result<Vec<(String, RunConfig)>> {
    match find(name)?.preset {
        Preset::Single(cfg) => Ok(vec![(name.to_string(), cfg)]),
        Preset::Group(members) => members
            .iter()
            .map(|m| match find(m)?.preset {
                Preset::Single(cfg) => Ok((m.to_string(), cfg)),
                Preset::Group(_) => Err(Error::Config(format!("nested group preset '{m}'"))),
            })
            .collect(),
    }
}
