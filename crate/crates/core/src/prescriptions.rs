//! Practice-level prescribing aggregated to areas. A GP practice's patients
//! are spread over areas with known fractions, so every prescription count
//! is apportioned by those fractions before per-capita rates are formed;
//! condition membership is decided by BNF code prefixes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AreaUnit;

/// The conditions tracked by the pipeline; `Total` covers every
/// prescription regardless of code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Diabetes,
    Hypertension,
    Asthma,
    Depression,
    Anxiety,
    Opioids,
    Total,
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::Diabetes,
        Condition::Hypertension,
        Condition::Asthma,
        Condition::Depression,
        Condition::Anxiety,
        Condition::Opioids,
        Condition::Total,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Diabetes => "diabetes",
            Condition::Hypertension => "hypertension",
            Condition::Asthma => "asthma",
            Condition::Depression => "depression",
            Condition::Anxiety => "anxiety",
            Condition::Opioids => "opioids",
            Condition::Total => "total",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::parse(format!("unknown condition {s:?}")))
    }
}

/// BNF code prefixes defining one condition's drug set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionList {
    pub condition: Condition,
    pub bnf_codes: BTreeSet<String>,
}

impl ConditionList {
    pub fn new(condition: Condition, codes: impl IntoIterator<Item = String>) -> Self {
        ConditionList {
            condition,
            bnf_codes: codes.into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.condition != Condition::Total && self.bnf_codes.is_empty() {
            return Err(Error::domain(format!(
                "condition {} has an empty code list",
                self.condition
            )));
        }
        if self.bnf_codes.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::domain(format!(
                "condition {} contains a blank code",
                self.condition
            )));
        }
        Ok(())
    }

    /// Prefix match against the BNF hierarchy; `Total` matches everything.
    pub fn matches(&self, bnf_code: &str) -> bool {
        self.condition == Condition::Total
            || self.bnf_codes.iter().any(|c| bnf_code.starts_with(c.as_str()))
    }
}

/// A GP practice with its registered patients split by home area.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPractice {
    pub gp_code: String,
    pub location: geo::Coord<f64>,
    /// Patients registered with the practice, keyed by their home area.
    pub patients_by_area: BTreeMap<String, u64>,
}

impl GpPractice {
    pub fn total_patients(&self) -> u64 {
        self.patients_by_area.values().sum()
    }
}

/// One prescribing ledger row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionRow {
    pub gp_code: String,
    pub bnf_code: String,
    pub items: u64,
    pub quantity: u64,
    pub cost: f64,
}

impl PrescriptionRow {
    pub fn validate(&self) -> Result<()> {
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(Error::domain(format!(
                "prescription for {} ({}): negative cost",
                self.gp_code, self.bnf_code
            )));
        }
        Ok(())
    }
}

/// Per-area, per-condition prescription totals and per-capita rates.
/// Per-capita fields are `None` where no patients were apportioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPrescriptionRate {
    pub area_id: String,
    pub condition: Condition,
    pub quantity_total: f64,
    pub cost_total: f64,
    pub patients: u64,
    pub quantity_per_capita: Option<f64>,
    pub cost_per_capita: Option<f64>,
}

/// Patients living in the area across all practices.
pub fn patients_in_area(gps: &[GpPractice], area_id: &str) -> u64 {
    gps.iter()
        .filter_map(|gp| gp.patients_by_area.get(area_id))
        .sum()
}

/// Share of the practice's patients living in the area. The shares over all
/// areas sum to 1 for every practice with patients.
pub fn gp_fraction(gp: &GpPractice, area_id: &str) -> Result<f64> {
    let total = gp.total_patients();
    if total == 0 {
        return Err(Error::domain(format!(
            "practice {} has no registered patients",
            gp.gp_code
        )));
    }
    let in_area = gp.patients_by_area.get(area_id).copied().unwrap_or(0);
    Ok(in_area as f64 / total as f64)
}

/// Quantity and cost attributed to one area.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ApportionedTotals {
    pub quantity: f64,
    pub cost: f64,
}

/// Per-practice accumulator. Quantities are integer-exact; cost
/// contributions are kept individually and summed in value order, so the
/// result is identical no matter how the input rows were ordered.
#[derive(Debug, Clone, Default)]
struct Accumulator {
    quantity: u64,
    costs: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, row: &PrescriptionRow) {
        self.quantity += row.quantity;
        self.costs.push(row.cost);
    }

    fn finish(mut self) -> ApportionedTotals {
        self.costs.sort_by(f64::total_cmp);
        ApportionedTotals {
            quantity: self.quantity as f64,
            cost: self.costs.iter().sum(),
        }
    }
}

/// Sums a condition's prescriptions over every practice serving the area,
/// scaled by each practice's patient share there. Rows naming unknown
/// practices are skipped with a warning, as are practices without patients.
pub fn condition_count(
    rows: &[PrescriptionRow],
    list: &ConditionList,
    gps: &[GpPractice],
    area_id: &str,
    warnings: &mut Vec<String>,
) -> ApportionedTotals {
    let by_code: HashMap<&str, &GpPractice> =
        gps.iter().map(|gp| (gp.gp_code.as_str(), gp)).collect();
    let mut per_gp: HashMap<&str, Accumulator> = HashMap::new();
    let mut unknown = BTreeSet::new();
    for row in rows {
        if !list.matches(&row.bnf_code) {
            continue;
        }
        if !by_code.contains_key(row.gp_code.as_str()) {
            unknown.insert(row.gp_code.clone());
            continue;
        }
        per_gp.entry(row.gp_code.as_str()).or_default().add(row);
    }
    if !unknown.is_empty() {
        warnings.push(format!(
            "quarantined prescriptions for {} unknown practice code(s): {}",
            unknown.len(),
            unknown.iter().cloned().collect::<Vec<_>>().join(", ")
        ));
    }
    let mut out = ApportionedTotals::default();
    // deterministic practice order
    for gp in gps {
        let Some(acc) = per_gp.remove(gp.gp_code.as_str()) else {
            continue;
        };
        if gp.total_patients() == 0 {
            warnings.push(format!(
                "practice {} has prescriptions but no registered patients; excluded",
                gp.gp_code
            ));
            continue;
        }
        let t = acc.finish();
        let f = gp_fraction(gp, area_id).expect("practice has patients");
        if f > 0.0 {
            out.quantity += t.quantity * f;
            out.cost += t.cost * f;
        }
    }
    out
}

/// Per-capita rate; `None` when there is nobody to divide by.
pub fn per_capita(area_total: f64, patients: u64) -> Option<f64> {
    if patients == 0 {
        None
    } else {
        Some(area_total / patients as f64)
    }
}

/// Rows that cannot be attributed to any known practice.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Quarantine {
    /// Indexes into the input row slice.
    pub row_indexes: Vec<usize>,
    pub unknown_codes: BTreeSet<String>,
}

/// Splits prescription rows into known-practice rows and a quarantine
/// report for the rest.
pub fn partition_known_rows(
    rows: &[PrescriptionRow],
    gps: &[GpPractice],
) -> (Vec<usize>, Quarantine) {
    let known: std::collections::HashSet<&str> =
        gps.iter().map(|gp| gp.gp_code.as_str()).collect();
    let mut keep = Vec::with_capacity(rows.len());
    let mut quarantine = Quarantine::default();
    for (i, row) in rows.iter().enumerate() {
        if known.contains(row.gp_code.as_str()) {
            keep.push(i);
        } else {
            quarantine.row_indexes.push(i);
            quarantine.unknown_codes.insert(row.gp_code.clone());
        }
    }
    (keep, quarantine)
}

/// Full per-area, per-condition rate table.
///
/// One pass accumulates each practice's per-condition totals, then every
/// (area, condition) pair receives its apportioned share. Unknown practice
/// codes on rows are quarantined with a warning; practices whose patient
/// table names an area outside `areas` are an ingestion error.
pub fn area_rates(
    rows: &[PrescriptionRow],
    lists: &[ConditionList],
    gps: &[GpPractice],
    areas: &[AreaUnit],
    warnings: &mut Vec<String>,
) -> Result<Vec<AreaPrescriptionRate>> {
    for list in lists {
        list.validate()?;
    }
    let mut seen = BTreeSet::new();
    for list in lists {
        if !seen.insert(list.condition) {
            return Err(Error::config(format!(
                "condition {} listed twice",
                list.condition
            )));
        }
    }
    for row in rows {
        row.validate()?;
    }
    let area_ids: BTreeSet<&str> = areas.iter().map(|a| a.id.as_str()).collect();
    let mut bad_refs = Vec::new();
    for gp in gps {
        for area_id in gp.patients_by_area.keys() {
            if !area_ids.contains(area_id.as_str()) {
                bad_refs.push(format!("{} -> {}", gp.gp_code, area_id));
            }
        }
    }
    if !bad_refs.is_empty() {
        return Err(Error::ingestion(
            format!(
                "patient table references unknown area ids: {}",
                bad_refs.join(", ")
            ),
            Vec::new(),
        ));
    }

    let (keep, quarantine) = partition_known_rows(rows, gps);
    if !quarantine.row_indexes.is_empty() {
        warnings.push(format!(
            "quarantined {} prescription row(s) for {} unknown practice code(s): {}",
            quarantine.row_indexes.len(),
            quarantine.unknown_codes.len(),
            quarantine
                .unknown_codes
                .iter()
                .cloned()
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }

    // per-practice, per-condition totals in one pass over the rows
    let gp_index: HashMap<&str, usize> = gps
        .iter()
        .enumerate()
        .map(|(i, gp)| (gp.gp_code.as_str(), i))
        .collect();
    let mut accums = vec![vec![Accumulator::default(); lists.len()]; gps.len()];
    let mut rows_per_gp = vec![0u64; gps.len()];
    for &i in &keep {
        let row = &rows[i];
        let g = gp_index[row.gp_code.as_str()];
        rows_per_gp[g] += 1;
        for (c, list) in lists.iter().enumerate() {
            if list.matches(&row.bnf_code) {
                accums[g][c].add(row);
            }
        }
    }
    let totals: Vec<Vec<ApportionedTotals>> = accums
        .into_iter()
        .map(|per| per.into_iter().map(Accumulator::finish).collect())
        .collect();
    let patient_counts: Vec<u64> = gps.iter().map(|gp| gp.total_patients()).collect();
    for (g, (gp, &n)) in gps.iter().zip(&patient_counts).enumerate() {
        if n == 0 && rows_per_gp[g] > 0 {
            warnings.push(format!(
                "practice {} has prescriptions but no registered patients; excluded",
                gp.gp_code
            ));
        }
    }

    let mut out = Vec::with_capacity(areas.len() * lists.len());
    for area in areas {
        let patients = patients_in_area(gps, &area.id);
        for (c, list) in lists.iter().enumerate() {
            let mut t = ApportionedTotals::default();
            for (g, gp) in gps.iter().enumerate() {
                if patient_counts[g] == 0 {
                    continue;
                }
                let in_area = gp.patients_by_area.get(&area.id).copied().unwrap_or(0);
                if in_area == 0 {
                    continue;
                }
                let f = in_area as f64 / patient_counts[g] as f64;
                t.quantity += totals[g][c].quantity * f;
                t.cost += totals[g][c].cost * f;
            }
            out.push(AreaPrescriptionRate {
                area_id: area.id.clone(),
                condition: list.condition,
                quantity_total: t.quantity,
                cost_total: t.cost,
                patients,
                quantity_per_capita: per_capita(t.quantity, patients),
                cost_per_capita: per_capita(t.cost, patients),
            });
        }
    }
    Ok(out)
}

/// Projected quantity and cost reduction over the control group: the summed
/// area totals scaled once by the fractional treatment effect. An empty
/// control group projects zero and leaves a warning.
pub fn reduction_projection(
    rates: &[AreaPrescriptionRate],
    treatment_flags: &[bool],
    ate: f64,
    warnings: &mut Vec<String>,
) -> Result<(f64, f64)> {
    if rates.len() != treatment_flags.len() {
        return Err(Error::config(format!(
            "{} rate rows but {} treatment flags",
            rates.len(),
            treatment_flags.len()
        )));
    }
    if !ate.is_finite() {
        return Err(Error::domain(format!("non-finite effect estimate {ate}")));
    }
    let mut quantity = 0.0;
    let mut cost = 0.0;
    let mut n = 0usize;
    for (rate, &treated) in rates.iter().zip(treatment_flags) {
        if treated {
            continue;
        }
        quantity += rate.quantity_total;
        cost += rate.cost_total;
        n += 1;
    }
    if n == 0 {
        warnings.push("control group is empty; projected reduction is zero".to_string());
        return Ok((0.0, 0.0));
    }
    Ok((quantity * ate, cost * ate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AreaKind;
    use approx::assert_relative_eq;
    use geo::{Coord, LineString, MultiPolygon, Polygon};

    fn gp(code: &str, patients: &[(&str, u64)]) -> GpPractice {
        GpPractice {
            gp_code: code.to_string(),
            location: Coord { x: 0.0, y: 0.0 },
            patients_by_area: patients
                .iter()
                .map(|(a, n)| (a.to_string(), *n))
                .collect(),
        }
    }

    fn row(gp: &str, bnf: &str, quantity: u64, cost: f64) -> PrescriptionRow {
        PrescriptionRow {
            gp_code: gp.to_string(),
            bnf_code: bnf.to_string(),
            items: 1,
            quantity,
            cost,
        }
    }

    fn area(id: &str) -> AreaUnit {
        // geometry is irrelevant here; any valid square works
        AreaUnit::new(
            id,
            AreaKind::Ward,
            MultiPolygon(vec![Polygon::new(
                LineString::from(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]),
                vec![],
            )]),
            0.0,
        )
    }

    fn diabetes() -> ConditionList {
        ConditionList::new(Condition::Diabetes, ["0601022B0".to_string()])
    }

    #[test]
    fn patients_sum_across_practices() {
        let gps = vec![gp("G1", &[("a", 120)])];
        assert_eq!(patients_in_area(&gps, "a"), 120);
        let gps = vec![gp("G1", &[("a", 30)]), gp("G2", &[("a", 70), ("b", 10)])];
        assert_eq!(patients_in_area(&gps, "a"), 100);
        assert_eq!(patients_in_area(&gps, "b"), 10);
        assert_eq!(patients_in_area(&gps, "c"), 0);
    }

    #[test]
    fn fractions_follow_patient_shares() {
        let g = gp("G1", &[("a", 25), ("b", 75)]);
        assert_eq!(gp_fraction(&g, "a").unwrap(), 0.25);
        assert_eq!(gp_fraction(&g, "b").unwrap(), 0.75);
        assert_eq!(gp_fraction(&g, "elsewhere").unwrap(), 0.0);

        let whole = gp("G2", &[("a", 40)]);
        assert_eq!(gp_fraction(&whole, "a").unwrap(), 1.0);
        assert_eq!(gp_fraction(&whole, "b").unwrap(), 0.0);

        let split = gp("G3", &[("a", 20), ("b", 30), ("c", 50)]);
        assert_eq!(gp_fraction(&split, "a").unwrap(), 0.2);
        assert_eq!(gp_fraction(&split, "b").unwrap(), 0.3);
        assert_eq!(gp_fraction(&split, "c").unwrap(), 0.5);
        let sum: f64 = ["a", "b", "c"].iter().map(|a| gp_fraction(&split, a).unwrap()).sum();
        assert_relative_eq!(sum, 1.0, max_relative = 1e-12);

        assert!(gp_fraction(&gp("G4", &[]), "a").is_err());
    }

    #[test]
    fn prefix_matching_follows_code_hierarchy() {
        let list = diabetes();
        assert!(list.matches("0601022B0AAABAB"));
        assert!(list.matches("0601022B0"));
        assert!(!list.matches("0601022C0AAABAB"));
        assert!(!list.matches("0205051R0"));

        let total = ConditionList::new(Condition::Total, []);
        assert!(total.matches("anything"));
        total.validate().unwrap();
        assert!(ConditionList::new(Condition::Asthma, []).validate().is_err());
    }

    #[test]
    fn condition_count_apportions_by_fraction() {
        let gps = vec![gp("G1", &[("a", 100)])];
        let rows: Vec<PrescriptionRow> = (0..10)
            .map(|_| row("G1", "0601022B0AAABAB", 28, 3.5))
            .collect();
        let mut warnings = Vec::new();
        let t = condition_count(&rows, &diabetes(), &gps, "a", &mut warnings);
        assert_eq!(t.quantity, 280.0);
        assert_relative_eq!(t.cost, 35.0, max_relative = 1e-12);

        // the same practice split evenly across two areas
        let gps = vec![gp("G1", &[("a", 60), ("b", 60)])];
        let ta = condition_count(&rows, &diabetes(), &gps, "a", &mut warnings);
        let tb = condition_count(&rows, &diabetes(), &gps, "b", &mut warnings);
        assert_eq!(ta.quantity, 140.0);
        assert_eq!(tb.quantity, 140.0);
        assert!(warnings.is_empty());
    }

    #[test]
    fn unknown_practices_are_quarantined() {
        let gps = vec![gp("G1", &[("a", 100)])];
        let rows = vec![
            row("G1", "0601022B0AA", 10, 1.0),
            row("GHOST", "0601022B0AA", 99, 9.0),
        ];
        let mut warnings = Vec::new();
        let t = condition_count(&rows, &diabetes(), &gps, "a", &mut warnings);
        assert_eq!(t.quantity, 10.0);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("GHOST"));

        let (keep, q) = partition_known_rows(&rows, &gps);
        assert_eq!(keep, vec![0]);
        assert_eq!(q.row_indexes, vec![1]);
        assert!(q.unknown_codes.contains("GHOST"));
    }

    #[test]
    fn per_capita_rates() {
        assert_eq!(per_capita(280.0, 100), Some(2.8));
        assert_eq!(per_capita(0.0, 100), Some(0.0));
        assert_eq!(per_capita(280.0, 0), None);
    }

    #[test]
    fn rate_table_matches_hand_computation() {
        // G1 splits 50/50 over a and b, G2 sits fully in a, G3 fully in b
        let gps = vec![
            gp("G1", &[("a", 50), ("b", 50)]),
            gp("G2", &[("a", 200)]),
            gp("G3", &[("b", 50)]),
        ];
        let lists = vec![
            ConditionList::new(Condition::Diabetes, ["01".to_string()]),
            ConditionList::new(Condition::Asthma, ["02".to_string()]),
            ConditionList::new(Condition::Total, []),
        ];
        let rows = vec![
            row("G1", "0101", 10, 5.0),
            row("G1", "0202", 4, 2.0),
            row("G2", "0103", 8, 3.0),
            row("G3", "0201", 6, 9.0),
        ];
        let areas = vec![area("a"), area("b")];
        let mut warnings = Vec::new();
        let rates = area_rates(&rows, &lists, &gps, &areas, &mut warnings).unwrap();
        assert!(warnings.is_empty());
        let find = |area: &str, c: Condition| {
            rates
                .iter()
                .find(|r| r.area_id == area && r.condition == c)
                .unwrap()
        };

        let xa = find("a", Condition::Diabetes);
        assert_relative_eq!(xa.quantity_total, 10.0 * 0.5 + 8.0, max_relative = 1e-12);
        assert_relative_eq!(xa.cost_total, 5.0 * 0.5 + 3.0, max_relative = 1e-12);
        assert_eq!(xa.patients, 250);
        assert_relative_eq!(xa.quantity_per_capita.unwrap(), 13.0 / 250.0, max_relative = 1e-12);

        let xb = find("b", Condition::Diabetes);
        assert_relative_eq!(xb.quantity_total, 5.0, max_relative = 1e-12);
        let ya = find("a", Condition::Asthma);
        assert_relative_eq!(ya.quantity_total, 2.0, max_relative = 1e-12);
        assert_relative_eq!(ya.cost_total, 1.0, max_relative = 1e-12);
        let yb = find("b", Condition::Asthma);
        assert_relative_eq!(yb.quantity_total, 8.0, max_relative = 1e-12);
        assert_relative_eq!(yb.cost_total, 10.0, max_relative = 1e-12);

        // the catch-all condition dominates every specific one per area
        for id in ["a", "b"] {
            let total = find(id, Condition::Total);
            for c in [Condition::Diabetes, Condition::Asthma] {
                let rate = find(id, c);
                assert!(total.quantity_per_capita.unwrap() >= rate.quantity_per_capita.unwrap());
                assert!(total.cost_per_capita.unwrap() >= rate.cost_per_capita.unwrap());
            }
        }
    }

    #[test]
    fn apportionment_conserves_condition_totals() {
        let gps = vec![
            gp("G1", &[("a", 17), ("b", 23), ("c", 60)]),
            gp("G2", &[("a", 95), ("c", 5)]),
            gp("G3", &[("b", 131)]),
        ];
        let lists = vec![
            ConditionList::new(Condition::Diabetes, ["01".to_string()]),
            ConditionList::new(Condition::Total, []),
        ];
        let rows = vec![
            row("G1", "0101", 13, 7.25),
            row("G1", "0999", 5, 1.5),
            row("G2", "0102", 29, 11.0),
            row("G3", "0103", 31, 2.75),
            row("G3", "0901", 7, 0.5),
        ];
        let areas = vec![area("a"), area("b"), area("c")];
        let mut warnings = Vec::new();
        let rates = area_rates(&rows, &lists, &gps, &areas, &mut warnings).unwrap();
        for (condition, want_q, want_c) in [
            (Condition::Diabetes, 13.0 + 29.0 + 31.0, 7.25 + 11.0 + 2.75),
            (Condition::Total, 13.0 + 5.0 + 29.0 + 31.0 + 7.0, 7.25 + 1.5 + 11.0 + 2.75 + 0.5),
        ] {
            let q: f64 = rates
                .iter()
                .filter(|r| r.condition == condition)
                .map(|r| r.quantity_total)
                .sum();
            let c: f64 = rates
                .iter()
                .filter(|r| r.condition == condition)
                .map(|r| r.cost_total)
                .sum();
            assert_relative_eq!(q, want_q, max_relative = 1e-9);
            assert_relative_eq!(c, want_c, max_relative = 1e-9);
        }
    }

    #[test]
    fn unknown_area_reference_is_fatal() {
        let gps = vec![gp("G1", &[("nowhere", 10)])];
        let lists = vec![ConditionList::new(Condition::Total, [])];
        let areas = vec![area("a")];
        let mut warnings = Vec::new();
        let err = area_rates(&[], &lists, &gps, &areas, &mut warnings);
        match err {
            Err(Error::Ingestion { message, .. }) => {
                assert!(message.contains("nowhere"));
                assert!(message.contains("G1"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn practice_without_patients_is_excluded() {
        let gps = vec![gp("G1", &[("a", 100)]), gp("G0", &[])];
        let lists = vec![ConditionList::new(Condition::Total, [])];
        let rows = vec![row("G1", "0101", 10, 1.0), row("G0", "0101", 50, 5.0)];
        let areas = vec![area("a")];
        let mut warnings = Vec::new();
        let rates = area_rates(&rows, &lists, &gps, &areas, &mut warnings).unwrap();
        assert_eq!(rates[0].quantity_total, 10.0);
        assert!(warnings.iter().any(|w| w.contains("G0")));
    }

    #[test]
    fn zero_patient_area_reports_missing_rates() {
        let gps = vec![gp("G1", &[("a", 100)])];
        let lists = vec![ConditionList::new(Condition::Total, [])];
        let areas = vec![area("a"), area("empty")];
        let mut warnings = Vec::new();
        let rates = area_rates(&[], &lists, &gps, &areas, &mut warnings).unwrap();
        let empty = rates.iter().find(|r| r.area_id == "empty").unwrap();
        assert_eq!(empty.patients, 0);
        assert_eq!(empty.quantity_per_capita, None);
        assert_eq!(empty.cost_per_capita, None);
    }

    fn rate(id: &str, quantity_total: f64, cost_total: f64) -> AreaPrescriptionRate {
        AreaPrescriptionRate {
            area_id: id.to_string(),
            condition: Condition::Diabetes,
            quantity_total,
            cost_total,
            patients: 100,
            quantity_per_capita: Some(quantity_total / 100.0),
            cost_per_capita: Some(cost_total / 100.0),
        }
    }

    #[test]
    fn reduction_is_totals_times_effect() {
        let rates = vec![rate("a", 1000.0, 100.0), rate("b", 2000.0, 300.0), rate("c", 500.0, 50.0)];
        // c is treated, so only a and b count
        let flags = vec![false, false, true];
        let mut warnings = Vec::new();
        let (q, c) = reduction_projection(&rates, &flags, -0.03, &mut warnings).unwrap();
        assert_eq!(q, (1000.0 + 2000.0) * -0.03);
        assert_eq!(c, (100.0 + 300.0) * -0.03);

        let (q, c) = reduction_projection(&rates, &flags, 0.0, &mut warnings).unwrap();
        assert_eq!(q, 0.0);
        assert_eq!(c, 0.0);
        assert!(warnings.is_empty());
    }

    #[test]
    fn empty_control_group_projects_zero() {
        let rates = vec![rate("a", 1000.0, 100.0)];
        let mut warnings = Vec::new();
        let (q, c) = reduction_projection(&rates, &[true], -0.1, &mut warnings).unwrap();
        assert_eq!((q, c), (0.0, 0.0));
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("control group is empty"));
    }

    #[test]
    fn results_do_not_depend_on_row_order() {
        let gps = vec![
            gp("G1", &[("a", 31), ("b", 69)]),
            gp("G2", &[("a", 214), ("c", 9)]),
        ];
        let lists = vec![
            ConditionList::new(Condition::Diabetes, ["01".to_string()]),
            ConditionList::new(Condition::Total, []),
        ];
        // costs chosen so naive left-to-right float summation is order-sensitive
        let mut rows = vec![
            row("G1", "0101", 3, 0.1),
            row("G2", "0102", 7, 1e10),
            row("G1", "0103", 11, 0.2),
            row("G2", "0104", 5, -0.0),
            row("G1", "0105", 2, 0.3),
            row("G2", "0901", 9, 1e-10),
        ];
        let areas = vec![area("a"), area("b"), area("c")];
        let mut warnings = Vec::new();
        let forward = area_rates(&rows, &lists, &gps, &areas, &mut warnings).unwrap();
        rows.reverse();
        let backward = area_rates(&rows, &lists, &gps, &areas, &mut warnings).unwrap();
        rows.swap(0, 3);
        rows.swap(1, 4);
        let shuffled = area_rates(&rows, &lists, &gps, &areas, &mut warnings).unwrap();
        for other in [&backward, &shuffled] {
            for (x, y) in forward.iter().zip(other.iter()) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            let parsed: Condition = c.name().parse().unwrap();
            assert_eq!(parsed, c);
        }
        assert!("gout".parse::<Condition>().is_err());
    }
}
