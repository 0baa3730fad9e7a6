//! Per-site, per-group demographic summary in the layout of a cohort
//! characteristics table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::datamodel::{FeatureTable, Group, RecordMeta, Sex};
use crate::error::{Error, Result};
use crate::stats::{mean, sample_sd};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub site: String,
    pub group: Group,
    pub count: usize,
    pub age_mean: f64,
    /// Sample SD (n − 1 denominator); `None` for single-member groups.
    pub age_sd: Option<f64>,
    pub female: usize,
    pub male: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub rows: Vec<ManifestRow>,
}

impl CohortManifest {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn count(&self, group: Group) -> usize {
        self.rows
            .iter()
            .filter(|r| r.group == group)
            .map(|r| r.count)
            .sum()
    }

    pub fn row(&self, site: &str, group: Group) -> Option<&ManifestRow> {
        self.rows
            .iter()
            .find(|r| r.site == site && r.group == group)
    }

    /// `site,group,count,age_mean,age_sd,female,male`; undefined SD is blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("site,group,count,age_mean,age_sd,female,male\n");
        for r in &self.rows {
            let sd = r.age_sd.map(|v| format!("{v:.2}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:.2},{},{},{}",
                r.site, r.group, r.count, r.age_mean, sd, r.female, r.male
            );
        }
        let _ = writeln!(s, "Total,,{},,,,", self.total());
        s
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:<5} {:>5}  {:<17} {}\n",
            "Database", "Group", "Count", "Age (Mean ± SD)", "Sex (F/M)"
        );
        for r in &self.rows {
            let age = match r.age_sd {
                Some(sd) => format!("{:.2} ± {:.2}", r.age_mean, sd),
                None => format!("{:.2} ±", r.age_mean),
            };
            let _ = writeln!(
                s,
                "{:<10} {:<5} {:>5}  {:<17} {}/{}",
                r.site, r.group, r.count, age, r.female, r.male
            );
        }
        let _ = writeln!(s, "{:<10} {:<5} {:>5}", "Total", "", self.total());
        s
    }
}

pub fn manifest_of_records(records: &[RecordMeta]) -> Result<CohortManifest> {
    if records.is_empty() {
        return Err(Error::EmptyInput("cannot summarize an empty table".into()));
    }
    let mut cells: BTreeMap<(&str, Group), Vec<&RecordMeta>> = BTreeMap::new();
    for r in records {
        cells.entry((r.site.as_str(), r.group)).or_default().push(r);
    }
    let rows = cells
        .into_iter()
        .map(|((site, group), members)| {
            let ages: Vec<f64> = members.iter().map(|r| r.age).collect();
            let female = members.iter().filter(|r| r.sex == Sex::F).count();
            ManifestRow {
                site: site.to_owned(),
                group,
                count: members.len(),
                age_mean: mean(&ages),
                age_sd: (ages.len() > 1).then(|| sample_sd(&ages)),
                female,
                male: members.len() - female,
            }
        })
        .collect();
    Ok(CohortManifest { rows })
}

pub fn manifest(table: &FeatureTable) -> Result<CohortManifest> {
    manifest_of_records(table.records())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, site: &str, group: Group, age: f64, sex: Sex) -> RecordMeta {
        RecordMeta {
            subject_id: id.into(),
            site: site.into(),
            group,
            age,
            sex,
        }
    }

    #[test]
    fn single_member_sd_undefined() {
        let m = manifest_of_records(&[rec("a", "UdeA2", Group::ACr, 43.0, Sex::F)]).unwrap();
        let r = m.row("UdeA2", Group::ACr).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.age_mean, 43.0);
        assert_eq!(r.age_sd, None);
        assert!(m.to_csv().contains("UdeA2,ACr,1,43.00,,1,0"));
    }

    #[test]
    fn two_records_sample_sd() {
        let m = manifest_of_records(&[
            rec("a", "S", Group::HC, 30.0, Sex::F),
            rec("b", "S", Group::HC, 32.0, Sex::M),
        ])
        .unwrap();
        let r = m.row("S", Group::HC).unwrap();
        assert_eq!(r.age_mean, 31.0);
        assert!((r.age_sd.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!((r.female, r.male), (1, 1));
    }

    #[test]
    fn empty_groups_absent_and_counts_partition() {
        let recs = vec![
            rec("a", "S", Group::HC, 30.0, Sex::F),
            rec("b", "T", Group::ACr, 40.0, Sex::M),
            rec("c", "T", Group::ACr, 41.0, Sex::M),
        ];
        let m = manifest_of_records(&recs).unwrap();
        assert!(m.row("S", Group::ACr).is_none());
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn empty_table_rejected() {
        assert!(matches!(
            manifest_of_records(&[]),
            Err(Error::EmptyInput(_))
        ));
    }
}
