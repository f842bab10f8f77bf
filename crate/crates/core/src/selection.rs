//! Cell selection, DL/UL association and coverage-level assignment.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::radio::{
    coupling_loss_from_path_loss, rsrp_from_path_loss, BaseStationClass, Cell, CellId, LinkMeasure,
    Ue,
};

/// Per-class RSRP offsets used by [`SelectionPolicy::ClassThresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassOffsets {
    pub wide_area_db: f64,
    pub medium_range_db: f64,
    pub local_area_db: f64,
    pub home_db: f64,
}

impl ClassOffsets {
    pub fn offset_for(&self, class: BaseStationClass) -> f64 {
        match class {
            BaseStationClass::WideArea => self.wide_area_db,
            BaseStationClass::MediumRange => self.medium_range_db,
            BaseStationClass::LocalArea => self.local_area_db,
            BaseStationClass::Home { .. } => self.home_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SelectionPolicy {
    /// Strongest RSRP.
    RsrpOnly,
    /// Least path loss, estimated from RSRP and the broadcast NRS power.
    PathLossBased,
    /// Path loss once the best RSRP reaches normal coverage, RSRP otherwise.
    Hybrid {
        normal_coverage_rsrp_threshold_dbm: f64,
    },
    /// Strongest RSRP after a per-class offset.
    ClassThresholds { offsets: ClassOffsets },
    /// Strongest RSRP for DL, least path loss for UL.
    Decoupled,
}

impl SelectionPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionPolicy::RsrpOnly => "rsrp_only",
            SelectionPolicy::PathLossBased => "path_loss",
            SelectionPolicy::Hybrid { .. } => "hybrid",
            SelectionPolicy::ClassThresholds { .. } => "class_thresholds",
            SelectionPolicy::Decoupled => "decoupled",
        }
    }
}

/// What the UE knows about one candidate cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMeasure {
    pub cell_id: CellId,
    pub class: BaseStationClass,
    /// Broadcast NRS power, needed to turn RSRP back into path loss.
    pub nrs_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub link: LinkMeasure,
}

impl CellMeasure {
    /// Path loss as the UE estimates it: NRS power + gain - RSRP.
    pub fn estimated_path_loss_db(&self) -> f64 {
        self.nrs_power_dbm + self.antenna_gain_dbi - self.link.rsrp_dbm
    }
}

/// Measures every cell from the UE's position, including its shadowing.
pub fn measure_links(ue: &Ue, cells: &[Cell]) -> Result<Vec<CellMeasure>> {
    if cells.is_empty() {
        return Err(Error::InvalidInput("no cells to measure".into()));
    }
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let path_loss_db = cell
                .propagation
                .loss_at(cell.position.distance_to(&ue.position))
                + ue.shadowing_towards(i);
            CellMeasure {
                cell_id: cell.id,
                class: cell.class,
                nrs_power_dbm: cell.nrs_power_dbm,
                antenna_gain_dbi: cell.antenna_gain_dbi,
                link: LinkMeasure {
                    path_loss_db,
                    coupling_loss_db: coupling_loss_from_path_loss(
                        cell.class,
                        path_loss_db,
                        cell.antenna_gain_dbi,
                        ue.antenna_gain_dbi,
                    ),
                    rsrp_dbm: rsrp_from_path_loss(
                        cell.nrs_power_dbm,
                        cell.antenna_gain_dbi,
                        path_loss_db,
                    ),
                },
            }
        })
        .collect())
}

/// The measure with the greatest key; ties go to the lowest cell id.
fn best_by<F>(measures: &[CellMeasure], key: F) -> Option<&CellMeasure>
where
    F: Fn(&CellMeasure) -> f64,
{
    measures.iter().min_by(|a, b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(Ordering::Equal)
            .then(a.cell_id.cmp(&b.cell_id))
    })
}

fn strongest(measures: &[CellMeasure]) -> Option<&CellMeasure> {
    best_by(measures, |m| m.link.rsrp_dbm)
}

fn least_path_loss(measures: &[CellMeasure]) -> Option<&CellMeasure> {
    best_by(measures, |m| -m.estimated_path_loss_db())
}

/// Picks the camping cell. `Decoupled` returns the DL (strongest) cell; use
/// [`decoupled_association`] for the full pair.
pub fn select_cell(measures: &[CellMeasure], policy: &SelectionPolicy) -> Result<CellId> {
    let chosen = match policy {
        SelectionPolicy::RsrpOnly | SelectionPolicy::Decoupled => strongest(measures),
        SelectionPolicy::PathLossBased => least_path_loss(measures),
        SelectionPolicy::Hybrid {
            normal_coverage_rsrp_threshold_dbm,
        } => match strongest(measures) {
            Some(best) if best.link.rsrp_dbm >= *normal_coverage_rsrp_threshold_dbm => {
                least_path_loss(measures)
            }
            other => other,
        },
        SelectionPolicy::ClassThresholds { offsets } => {
            best_by(measures, |m| m.link.rsrp_dbm + offsets.offset_for(m.class))
        }
    };
    chosen
        .map(|m| m.cell_id)
        .ok_or_else(|| Error::InvalidInput("no candidate cells".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Association {
    pub dl_cell: CellId,
    pub ul_cell: CellId,
}

impl Association {
    pub fn coupled(cell: CellId) -> Self {
        Self {
            dl_cell: cell,
            ul_cell: cell,
        }
    }

    pub fn is_decoupled(&self) -> bool {
        self.dl_cell != self.ul_cell
    }
}

pub fn decoupled_association(measures: &[CellMeasure]) -> Result<Association> {
    match (strongest(measures), least_path_loss(measures)) {
        (Some(dl), Some(ul)) => Ok(Association {
            dl_cell: dl.cell_id,
            ul_cell: ul.cell_id,
        }),
        _ => Err(Error::InvalidInput("no candidate cells".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CeLevel {
    Ce0,
    Ce1,
    Ce2,
    OutOfCoverage,
}

impl CeLevel {
    pub const SERVED: [CeLevel; 3] = [CeLevel::Ce0, CeLevel::Ce1, CeLevel::Ce2];

    pub fn name(&self) -> &'static str {
        match self {
            CeLevel::Ce0 => "CE0",
            CeLevel::Ce1 => "CE1",
            CeLevel::Ce2 => "CE2",
            CeLevel::OutOfCoverage => "OOC",
        }
    }

    /// The next more robust level, if any.
    pub fn next(&self) -> Option<CeLevel> {
        match self {
            CeLevel::Ce0 => Some(CeLevel::Ce1),
            CeLevel::Ce1 => Some(CeLevel::Ce2),
            _ => None,
        }
    }
}

impl fmt::Display for CeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoverageLevel {
    pub level: CeLevel,
    /// `None` for out of coverage.
    pub repetitions: Option<u32>,
}

/// Coupling-loss upper bounds and repetition counts for CE0, CE1, CE2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageThresholds {
    pub max_coupling_loss_db: [f64; 3],
    pub repetitions: [u32; 3],
}

impl Default for CoverageThresholds {
    fn default() -> Self {
        Self {
            max_coupling_loss_db: [144.0, 154.0, 164.0],
            repetitions: [1, 8, 32],
        }
    }
}

impl CoverageThresholds {
    pub fn validate(&self) -> Result<()> {
        let b = self.max_coupling_loss_db;
        if b.iter().any(|v| !v.is_finite()) || !(b[0] < b[1] && b[1] < b[2]) {
            return Err(Error::config(
                "coverage.max_coupling_loss_db",
                "bounds must be finite and strictly increasing",
            ));
        }
        let r = self.repetitions;
        if r[0] == 0 || !(r[0] <= r[1] && r[1] <= r[2]) {
            return Err(Error::config(
                "coverage.repetitions",
                "repetitions must be at least 1 and nondecreasing",
            ));
        }
        Ok(())
    }

    /// Largest coupling loss that is still served.
    pub fn mcl_db(&self) -> f64 {
        self.max_coupling_loss_db[2]
    }

    pub fn repetitions_for(&self, level: CeLevel) -> Option<u32> {
        match level {
            CeLevel::Ce0 => Some(self.repetitions[0]),
            CeLevel::Ce1 => Some(self.repetitions[1]),
            CeLevel::Ce2 => Some(self.repetitions[2]),
            CeLevel::OutOfCoverage => None,
        }
    }

    pub fn level(&self, level: CeLevel) -> CoverageLevel {
        CoverageLevel {
            level,
            repetitions: self.repetitions_for(level),
        }
    }
}

pub fn assign_coverage_level(
    coupling_loss_db: f64,
    thresholds: &CoverageThresholds,
) -> CoverageLevel {
    let level = CeLevel::SERVED
        .into_iter()
        .zip(thresholds.max_coupling_loss_db)
        .find(|(_, bound)| coupling_loss_db <= *bound)
        .map(|(level, _)| level)
        .unwrap_or(CeLevel::OutOfCoverage);
    thresholds.level(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::{CellSpec, Position};
    use proptest::prelude::*;

    fn measure(id: u32, class: BaseStationClass, rsrp: f64, pl: f64) -> CellMeasure {
        CellMeasure {
            cell_id: CellId(id),
            class,
            nrs_power_dbm: rsrp + pl,
            antenna_gain_dbi: 0.0,
            link: LinkMeasure {
                path_loss_db: pl,
                coupling_loss_db: pl,
                rsrp_dbm: rsrp,
            },
        }
    }

    fn macro_and_small() -> Vec<CellMeasure> {
        vec![
            measure(1, BaseStationClass::WideArea, -65.0, 115.0),
            measure(2, BaseStationClass::LocalArea, -71.0, 100.0),
        ]
    }

    #[test]
    fn measure_links_single_cell() {
        let mut spec = CellSpec::new(1, BaseStationClass::LocalArea, Position::ORIGIN);
        spec.nrs_power_dbm = 24.0;
        spec.antenna_gain_dbi = 5.0;
        // place the UE where the small-cell model gives exactly 100 dB
        let d_m = 1000.0 * 10f64.powf((100.0 - 140.7) / 36.7);
        let cells = vec![Cell::new(spec).unwrap()];
        let ue = Ue::new(0, Position::new(d_m, 0.0));
        let m = measure_links(&ue, &cells).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0].link.path_loss_db - 100.0).abs() < 1e-9);
        assert!((m[0].link.rsrp_dbm + 71.0).abs() < 1e-9);
        assert!((m[0].link.coupling_loss_db - 95.0).abs() < 1e-9);
    }

    #[test]
    fn measure_links_rejects_empty() {
        assert!(measure_links(&Ue::new(0, Position::ORIGIN), &[]).is_err());
    }

    #[test]
    fn co_located_twins_measure_the_same() {
        let a = Cell::new(CellSpec::new(
            1,
            BaseStationClass::WideArea,
            Position::ORIGIN,
        ))
        .unwrap();
        let b = Cell::new(CellSpec::new(
            2,
            BaseStationClass::WideArea,
            Position::ORIGIN,
        ))
        .unwrap();
        let m = measure_links(&Ue::new(0, Position::new(300.0, 20.0)), &[a, b]).unwrap();
        assert_eq!(m[0].link, m[1].link);
    }

    #[test]
    fn shadowing_is_applied_per_cell() {
        let a = Cell::new(CellSpec::new(
            1,
            BaseStationClass::WideArea,
            Position::ORIGIN,
        ))
        .unwrap();
        let mut ue = Ue::new(0, Position::new(500.0, 0.0));
        let base = measure_links(&ue, std::slice::from_ref(&a)).unwrap()[0].link;
        ue.shadowing_db = vec![4.0];
        let shadowed = measure_links(&ue, &[a]).unwrap()[0].link;
        assert!((shadowed.path_loss_db - base.path_loss_db - 4.0).abs() < 1e-9);
        assert!((shadowed.rsrp_dbm - base.rsrp_dbm + 4.0).abs() < 1e-9);
    }

    #[test]
    fn selection_examples() {
        let m = macro_and_small();
        assert_eq!(
            select_cell(&m, &SelectionPolicy::RsrpOnly).unwrap(),
            CellId(1)
        );
        assert_eq!(
            select_cell(&m, &SelectionPolicy::PathLossBased).unwrap(),
            CellId(2)
        );
        let hybrid = SelectionPolicy::Hybrid {
            normal_coverage_rsrp_threshold_dbm: -80.0,
        };
        assert_eq!(select_cell(&m, &hybrid).unwrap(), CellId(2));
        let strict = SelectionPolicy::Hybrid {
            normal_coverage_rsrp_threshold_dbm: -60.0,
        };
        assert_eq!(select_cell(&m, &strict).unwrap(), CellId(1));
        let sol3 = SelectionPolicy::ClassThresholds {
            offsets: ClassOffsets {
                local_area_db: 8.0,
                ..Default::default()
            },
        };
        assert_eq!(select_cell(&m, &sol3).unwrap(), CellId(2));
        assert!(select_cell(&[], &SelectionPolicy::RsrpOnly).is_err());
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let m = vec![
            measure(7, BaseStationClass::WideArea, -80.0, 110.0),
            measure(3, BaseStationClass::WideArea, -80.0, 110.0),
        ];
        assert_eq!(
            select_cell(&m, &SelectionPolicy::RsrpOnly).unwrap(),
            CellId(3)
        );
        assert_eq!(
            select_cell(&m, &SelectionPolicy::PathLossBased).unwrap(),
            CellId(3)
        );
    }

    #[test]
    fn decoupled_examples() {
        let a = decoupled_association(&macro_and_small()).unwrap();
        assert_eq!(
            a,
            Association {
                dl_cell: CellId(1),
                ul_cell: CellId(2)
            }
        );
        assert!(a.is_decoupled());

        let single = vec![measure(1, BaseStationClass::WideArea, -90.0, 120.0)];
        assert_eq!(
            decoupled_association(&single).unwrap(),
            Association::coupled(CellId(1))
        );

        // equal tx power and gain: RSRP order is path-loss order
        let equal = vec![
            measure(1, BaseStationClass::WideArea, -90.0, 120.0),
            measure(2, BaseStationClass::WideArea, -80.0, 110.0),
        ];
        let a = decoupled_association(&equal).unwrap();
        assert_eq!(a.dl_cell, a.ul_cell);
        assert!(decoupled_association(&[]).is_err());
    }

    #[test]
    fn coverage_levels() {
        let t = CoverageThresholds::default();
        assert_eq!(
            assign_coverage_level(120.0, &t),
            CoverageLevel {
                level: CeLevel::Ce0,
                repetitions: Some(1)
            }
        );
        assert_eq!(assign_coverage_level(144.0, &t).level, CeLevel::Ce0);
        assert_eq!(
            assign_coverage_level(150.0, &t),
            CoverageLevel {
                level: CeLevel::Ce1,
                repetitions: Some(8)
            }
        );
        assert_eq!(
            assign_coverage_level(164.0, &t),
            CoverageLevel {
                level: CeLevel::Ce2,
                repetitions: Some(32)
            }
        );
        assert_eq!(
            assign_coverage_level(170.0, &t),
            CoverageLevel {
                level: CeLevel::OutOfCoverage,
                repetitions: None
            }
        );
    }

    #[test]
    fn coverage_threshold_validation() {
        assert!(CoverageThresholds::default().validate().is_ok());
        let bad = CoverageThresholds {
            max_coupling_loss_db: [144.0, 144.0, 164.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CoverageThresholds {
            repetitions: [4, 2, 32],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_measures() -> impl Strategy<Value = Vec<CellMeasure>> {
        prop::collection::vec((-140.0f64..-40.0, 60.0f64..170.0, 0u8..4), 1..8).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (rsrp, pl, c))| {
                    let class = match c {
                        0 => BaseStationClass::WideArea,
                        1 => BaseStationClass::MediumRange,
                        2 => BaseStationClass::LocalArea,
                        _ => BaseStationClass::Home { antenna_ports: 1 },
                    };
                    measure(i as u32 + 1, class, rsrp, pl)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn rsrp_choice_survives_common_shift(m in arb_measures(), shift in -30.0f64..30.0) {
            let shifted: Vec<_> = m.iter().map(|x| {
                let mut y = *x;
                y.link.rsrp_dbm += shift;
                y.nrs_power_dbm += shift;
                y
            }).collect();
            prop_assert_eq!(
                select_cell(&m, &SelectionPolicy::RsrpOnly).unwrap(),
                select_cell(&shifted, &SelectionPolicy::RsrpOnly).unwrap()
            );
        }

        #[test]
        fn path_loss_choice_survives_common_shift(m in arb_measures(), shift in -30.0f64..30.0) {
            let shifted: Vec<_> = m.iter().map(|x| {
                let mut y = *x;
                y.link.path_loss_db += shift;
                y.link.rsrp_dbm -= shift;
                y
            }).collect();
            prop_assert_eq!(
                select_cell(&m, &SelectionPolicy::PathLossBased).unwrap(),
                select_cell(&shifted, &SelectionPolicy::PathLossBased).unwrap()
            );
        }

        #[test]
        fn hybrid_limits(m in arb_measures()) {
            let always_rsrp = SelectionPolicy::Hybrid { normal_coverage_rsrp_threshold_dbm: f64::INFINITY };
            let always_pl = SelectionPolicy::Hybrid { normal_coverage_rsrp_threshold_dbm: f64::NEG_INFINITY };
            prop_assert_eq!(select_cell(&m, &always_rsrp).unwrap(), select_cell(&m, &SelectionPolicy::RsrpOnly).unwrap());
            prop_assert_eq!(select_cell(&m, &always_pl).unwrap(), select_cell(&m, &SelectionPolicy::PathLossBased).unwrap());
        }

        #[test]
        fn decoupled_ul_never_worse_than_dl(m in arb_measures()) {
            let a = decoupled_association(&m).unwrap();
            let pl = |id: CellId| m.iter().find(|x| x.cell_id == id).unwrap().estimated_path_loss_db();
            prop_assert!(pl(a.ul_cell) <= pl(a.dl_cell));
        }

        #[test]
        fn coverage_level_monotone(a in 50.0f64..200.0, b in 50.0f64..200.0) {
            let t = CoverageThresholds::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(assign_coverage_level(lo, &t).level <= assign_coverage_level(hi, &t).level);
        }
    }
}
