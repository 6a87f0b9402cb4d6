mod common;

use std::collections::HashSet;

use ooc_stencil::domain::{acoustic_datasets, plan_decomposition};
use ooc_stencil::scheduler::{schedule, validate_exclusive, Action, LoweredSchedule};
use ooc_stencil::{CodecSpec, GridSpec, ScheduleMode};

const MODES: [ScheduleMode; 3] = [ScheduleMode::Baseline, ScheduleMode::Compress, ScheduleMode::CompressSwb];

fn lowered(mode: ScheduleMode, n: usize, sharing: bool, lanes: usize) -> LoweredSchedule {
    let grid = GridSpec::new(10, 10, 24 * n, 4).unwrap();
    let plan = plan_decomposition(&grid, n, 1, sharing).unwrap();
    schedule(&plan, mode, &acoustic_datasets(), &CodecSpec::Truncate, lanes).unwrap()
}

fn structural_pairs(s: &LoweredSchedule) -> HashSet<(String, String)> {
    validate_exclusive(s).into_iter().map(|v| (v.first, v.second)).collect()
}

fn explored_pairs(s: &LoweredSchedule) -> HashSet<(String, String)> {
    common::racing_pairs(s)
        .into_iter()
        .map(|(a, b)| (s.nodes[a].label(), s.nodes[b].label()))
        .collect()
}

#[test]
fn generated_schedules_have_no_reachable_race() {
    for mode in MODES {
        for sharing in [false, true] {
            for n in 1..=5 {
                let s = lowered(mode, n, sharing, 3);
                assert!(explored_pairs(&s).is_empty(), "{mode} n={n} sharing={sharing}");
                assert!(validate_exclusive(&s).is_empty());
            }
        }
    }
}

#[test]
fn structural_check_agrees_with_exhaustive_exploration_on_mutants() {
    for mode in MODES {
        for sharing in [false, true] {
            for n in [2, 3, 4] {
                let s = lowered(mode, n, sharing, 3);
                for k in 0..s.wait_count() {
                    let m = s.without_wait(k).unwrap();
                    assert_eq!(
                        structural_pairs(&m),
                        explored_pairs(&m),
                        "{mode} n={n} sharing={sharing} without wait {k}"
                    );
                }
            }
        }
    }
}

#[test]
fn deleting_any_wait_that_has_a_record_breaks_exclusivity() {
    for mode in MODES {
        for sharing in [false, true] {
            for n in 1..=12 {
                let s = lowered(mode, n, sharing, 3);
                let mut seen = std::collections::HashMap::new();
                let mut k = 0;
                for a in &s.actions {
                    match a.action {
                        Action::Record { event } => {
                            seen.insert(event, ());
                        }
                        Action::Wait { event } => {
                            let m = s.without_wait(k).unwrap();
                            let broken = !validate_exclusive(&m).is_empty();
                            assert_eq!(broken, seen.contains_key(&event), "{mode} n={n} wait {k} on {event}");
                            k += 1;
                        }
                        Action::Op { .. } => {}
                    }
                }
            }
        }
    }
}

#[test]
fn other_lane_counts_stay_exclusive() {
    for lanes in [1, 2, 4] {
        for mode in MODES {
            for n in 1..=7 {
                let s = lowered(mode, n, lanes > 1, lanes);
                assert!(validate_exclusive(&s).is_empty(), "{mode} lanes={lanes} n={n}");
            }
        }
    }
}

#[test]
fn sharing_with_one_lane_is_rejected() {
    let grid = GridSpec::new(10, 10, 48, 4).unwrap();
    let plan = plan_decomposition(&grid, 2, 1, true).unwrap();
    let r = schedule(&plan, ScheduleMode::Baseline, &acoustic_datasets(), &CodecSpec::Identity, 1);
    assert!(matches!(r, Err(ooc_stencil::Error::Config(_))));
}
