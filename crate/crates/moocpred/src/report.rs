//! CSV renderings of the JSON reports: the course-by-setting transfer table,
//! the ablation table, and the attention summary.

use std::collections::BTreeSet;

use moocpred_core::experiments::{
    AblationTable, AttentionSummary, ExperimentReport, Population, SettingKind, SettingRow,
    SETTINGS,
};
use moocpred_core::models::ArchKind;

fn bac(x: f64) -> String {
    format!("{x:.4}")
}

fn arch_name(kind: ArchKind) -> &'static str {
    match kind {
        ArchKind::Bo => "bo",
        ArchKind::Btm => "btm",
        ArchKind::Bsm => "bsm",
    }
}

fn mean_of(row: &SettingRow, pop: Population) -> Option<f64> {
    match pop {
        Population::Filtered => row.mean_filtered_bac,
        Population::Full => row.mean_full_bac,
    }
}

/// One row per (target course, architecture), one column per setting, mean
/// balanced accuracy in the cells. Settings that were not run (or are
/// inapplicable) render as `-`, mirroring the gaps of a results table.
pub fn transfer_table(report: &ExperimentReport, pop: Population) -> String {
    let rows: BTreeSet<(&str, &'static str)> = report
        .rows
        .iter()
        .map(|r| (r.course_id.as_str(), arch_name(r.arch)))
        .collect();
    let mut out = String::from("course,arch");
    for kind in SETTINGS {
        out.push(',');
        out.push_str(kind.name());
    }
    out.push('\n');
    for (course, arch) in rows {
        out.push_str(course);
        out.push(',');
        out.push_str(arch);
        for kind in SETTINGS {
            out.push(',');
            let cell = report
                .rows
                .iter()
                .find(|r| {
                    r.course_id == course && arch_name(r.arch) == arch && r.setting == kind
                })
                .and_then(|r| mean_of(r, pop));
            match cell {
                Some(x) => out.push_str(&bac(x)),
                None => out.push('-'),
            }
        }
        out.push('\n');
    }
    out
}

/// Per-source balanced accuracies of the 1-1 Diff rows, one line per
/// (course, architecture, source). Empty when the report has no such rows.
pub fn per_source_table(report: &ExperimentReport, pop: Population) -> String {
    let mut out = String::from("course,arch,source,bac\n");
    for row in &report.rows {
        if row.setting != SettingKind::OneOneDiff {
            continue;
        }
        for eval in row.evals.iter().filter(|e| e.population == pop) {
            if let Some(src) = &eval.segment {
                out.push_str(&format!(
                    "{},{},{src},{}\n",
                    row.course_id,
                    arch_name(row.arch),
                    bac(eval.bac)
                ));
            }
        }
    }
    out
}

pub fn ablation_table(table: &AblationTable) -> String {
    let mut out = String::from("name,val_bac,test_bac,n_test\n");
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.name,
            bac(row.val_bac),
            bac(row.test_bac),
            row.n_test
        ));
    }
    out
}

pub fn attention_table(summary: &AttentionSummary) -> String {
    let mut out = String::from("group,name,mean,q1,median,q3\n");
    for (group, rows) in [
        ("slice", &summary.slice_rows),
        ("branch", &summary.branch_rows),
    ] {
        for row in rows {
            out.push_str(&format!(
                "{group},{},{},{},{},{}\n",
                row.name,
                bac(row.mean),
                bac(row.q1),
                bac(row.median),
                bac(row.q3)
            ));
        }
    }
    out
}
