use nbsim_core::architecture::TraceKind;
use nbsim_core::engine::{drop_ues, run_campaign, run_drop, AttachOutcome};
use nbsim_core::presets::{preset_config, PresetScenario};
use nbsim_core::radio::CellId;

#[test]
fn campaign_drops_match_single_drops() {
    let mut c = preset_config(PresetScenario::DecoupledDemo);
    c.radio.shadowing_sigma_db = 6.0;
    let campaign = run_campaign(&c).unwrap();
    for (d, report) in campaign.drops.iter().enumerate() {
        assert_eq!(report, &run_drop(&c, d as u32).unwrap());
    }
}

#[test]
fn drops_differ_and_seeds_differ() {
    let c = preset_config(PresetScenario::Fig3a);
    assert_ne!(drop_ues(&c, 0), drop_ues(&c, 1));
    let mut other = c.clone();
    other.seed += 1;
    assert_ne!(drop_ues(&c, 0), drop_ues(&other, 0));
}

#[test]
fn dropped_ues_stay_in_region() {
    let c = preset_config(PresetScenario::Fig3a);
    for d in 0..5 {
        for p in drop_ues(&c, d) {
            assert!((p.x - 100.0).hypot(p.y) <= 100.0 + 1e-9);
        }
    }
}

#[test]
fn fig3b_non_member_is_kept_off_the_femto() {
    let c = preset_config(PresetScenario::Fig3b);
    let r = run_campaign(&c).unwrap();
    for d in &r.drops {
        let outsider = d
            .ues
            .iter()
            .find(|u| !u.csg_member)
            .expect("fixed UE present");
        assert_ne!(outsider.ul_cell, Some(CellId(2)));
        for member in d
            .ues
            .iter()
            .filter(|u| u.csg_member && u.outcome == AttachOutcome::Connected)
        {
            assert!(member.tx_power_dbm.unwrap() <= c.power.ue_max_dbm);
        }
    }
}

#[test]
fn csg_mode_raises_member_power() {
    let on = preset_config(PresetScenario::Fig3b);
    let mut off = on.clone();
    off.flags.csg_mode = false;
    let (a, b) = (run_campaign(&on).unwrap(), run_campaign(&off).unwrap());
    let member_power = |r: &nbsim_core::CampaignReport| -> f64 {
        r.drops
            .iter()
            .flat_map(|d| d.ues.iter())
            .filter(|u| u.csg_member && u.ul_cell == Some(CellId(2)))
            .filter_map(|u| u.tx_power_dbm)
            .sum()
    };
    assert!(member_power(&a) >= member_power(&b));
}

#[test]
fn trace_starts_with_sync_and_ends_terminal() {
    let c = preset_config(PresetScenario::Fig3a);
    let r = run_drop(&c, 0).unwrap();
    for ue in &r.ues {
        let events: Vec<_> = r.trace.iter().filter(|e| e.ue == ue.ue_id).collect();
        assert!(!events.is_empty());
        let last = events.last().unwrap().kind;
        assert!(matches!(last, TraceKind::Connected | TraceKind::Failed));
        let line = events[0].to_string();
        assert!(line.starts_with("t=0 ue="), "{line}");
    }
}

#[test]
fn far_ues_fail_out_of_coverage() {
    let mut c = preset_config(PresetScenario::Homogeneous);
    c.region = nbsim_core::engine::DropRegion::UniformDisc {
        center: nbsim_core::radio::Position::new(60_000.0, 0.0),
        radius_m: 10.0,
    };
    let r = run_drop(&c, 0).unwrap();
    assert!(r
        .ues
        .iter()
        .all(|u| u.outcome == AttachOutcome::OutOfCoverage));
    assert_eq!(r.summary.coverage_probability, 0.0);
}
