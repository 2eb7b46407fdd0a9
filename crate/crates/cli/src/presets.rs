use rescon_core::sim::Scenario;

use crate::scenario_file::ScenarioFile;
use crate::CliError;

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub json: &'static str,
}

pub const PRESETS: [Preset; 6] = [
    Preset {
        name: "fig2",
        description: "attack-free consensus, noisy links, 40 s",
        json: include_str!("../presets/fig2.json"),
    },
    Preset {
        name: "fig3",
        description: "20 sin(t) actuator attack on root agent 0 from t = 20 s",
        json: include_str!("../presets/fig3.json"),
    },
    Preset {
        name: "fig4",
        description: "20 sin(t) actuator attack on non-root agent 4 from t = 20 s",
        json: include_str!("../presets/fig4.json"),
    },
    Preset {
        name: "fig6",
        description: "fig4 with detection and mitigation enabled",
        json: include_str!("../presets/fig6.json"),
    },
    Preset {
        name: "fig7",
        description: "10 + 5 sin(2t) actuator attack on agent 4 from t = 20 s",
        json: include_str!("../presets/fig7.json"),
    },
    Preset {
        name: "fig9",
        description: "fig7 with detection and mitigation enabled",
        json: include_str!("../presets/fig9.json"),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    pub fn file(&self) -> ScenarioFile {
        ScenarioFile::parse(self.json).expect("bundled presets parse")
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.file().to_scenario()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_loads_and_validates() {
        for p in &PRESETS {
            let s = p.scenario().unwrap();
            assert_eq!(s.name, p.name);
            assert_eq!(s.seed, 42);
            assert_eq!(s.divergence_cap, 100.0);
            assert!(s.detector.thresholds.is_none());
        }
    }

    #[test]
    fn presets_match_the_canonical_scenario_apart_from_the_overrides() {
        let c = Scenario::canonical();
        let s = find("fig2").unwrap().scenario().unwrap();
        assert_eq!(s.graph, c.graph);
        assert_eq!(s.dynamics, c.dynamics);
        assert_eq!(s.gains, c.gains);
        assert_eq!(s.noise, c.noise);
        assert_eq!(s.x0, c.x0);
        assert_eq!(s.t_end, 40.0);
        let fig6 = find("fig6").unwrap().scenario().unwrap();
        let fig4 = find("fig4").unwrap().scenario().unwrap();
        assert!(fig6.mitigation && !fig4.mitigation);
        assert_eq!(fig6.attacks, fig4.attacks);
        assert_eq!(fig4.compromised(), vec![4]);
        assert_eq!(find("fig3").unwrap().scenario().unwrap().compromised(), vec![0]);
    }
}
