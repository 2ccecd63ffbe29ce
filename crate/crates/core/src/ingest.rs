//! CSV ingestion: schema-driven parsing, complete-case filtering, direction
//! reversal, median dichotomization of the treatment, standardization, and
//! the capital-to-capital distance matrix.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{Country, Dataset};
use crate::error::{Error, Result};

/// Earth radius used for great-circle distances, in megameters.
pub const EARTH_RADIUS_MM: f64 = 6.371;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Id,
    Name,
    Year,
    Metric,
    Covariate,
    Treatment,
    CapitalLat,
    CapitalLon,
    IncomeGroup,
}

impl ColumnRole {
    fn is_numeric(self) -> bool {
        matches!(
            self,
            ColumnRole::Metric
                | ColumnRole::Covariate
                | ColumnRole::Treatment
                | ColumnRole::CapitalLat
                | ColumnRole::CapitalLon
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub name: String,
    pub role: ColumnRole,
}

/// Column declarations, in the order metrics and covariates should appear
/// in the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnDecl>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("column {} declared twice", c.name)));
            }
        }
        for (role, label) in [
            (ColumnRole::Id, "id"),
            (ColumnRole::Treatment, "treatment"),
            (ColumnRole::CapitalLat, "capital_lat"),
            (ColumnRole::CapitalLon, "capital_lon"),
        ] {
            let count = self.columns.iter().filter(|c| c.role == role).count();
            if count != 1 {
                return Err(Error::Schema(format!("expected exactly one {label} column, found {count}")));
            }
        }
        for (role, label) in [
            (ColumnRole::Name, "name"),
            (ColumnRole::Year, "year"),
            (ColumnRole::IncomeGroup, "income_group"),
        ] {
            if self.columns.iter().filter(|c| c.role == role).count() > 1 {
                return Err(Error::Schema(format!("at most one {label} column allowed")));
            }
        }
        if self.names(ColumnRole::Metric).is_empty() {
            return Err(Error::Schema("no metric columns declared".into()));
        }
        if self.names(ColumnRole::Covariate).is_empty() {
            return Err(Error::Schema("no covariate columns declared".into()));
        }
        Ok(())
    }

    pub fn names(&self, role: ColumnRole) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    }

    fn single(&self, role: ColumnRole) -> Option<&str> {
        self.columns.iter().find(|c| c.role == role).map(|c| c.name.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub country_id: String,
    pub name: Option<String>,
    pub income_group: Option<String>,
    pub year: i32,
    /// One entry per numeric column of the table; `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub schema: Schema,
    /// Numeric columns in declaration order.
    pub columns: Vec<String>,
    pub rows: Vec<RawRow>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn missing_count(&self) -> usize {
        self.rows.iter().flat_map(|r| &r.values).filter(|v| v.is_none()).count()
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r.values[j]).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentRule {
    /// Treated iff strictly above the sample median; ties go to control.
    #[default]
    StrictlyAboveMedian,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformSpec {
    /// Metrics whose direction is flipped so that larger means healthier.
    pub reverse_columns: Vec<String>,
    /// Defaults to the schema's treatment column.
    pub treatment_column: Option<String>,
    pub treatment_rule: TreatmentRule,
    /// Required when the table spans several years.
    pub year: Option<i32>,
    /// Defaults to the first surviving country.
    pub anchor_id: Option<String>,
}

impl TransformSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() || t == "NA" {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, schema)
}

pub fn parse_csv<R: Read>(reader: R, schema: &Schema) -> Result<RawTable> {
    schema.check()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let locate = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("header is missing declared column {name}")))
    };
    let numeric: Vec<&ColumnDecl> = schema.columns.iter().filter(|c| c.role.is_numeric()).collect();
    let numeric_idx = numeric.iter().map(|c| locate(&c.name)).collect::<Result<Vec<_>>>()?;
    let id_idx = locate(schema.single(ColumnRole::Id).expect("checked"))?;
    let name_idx = schema.single(ColumnRole::Name).map(locate).transpose()?;
    let year_idx = schema.single(ColumnRole::Year).map(locate).transpose()?;
    let income_idx = schema.single(ColumnRole::IncomeGroup).map(locate).transpose()?;

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let country_id = field(id_idx).to_string();
        if country_id.is_empty() {
            return Err(Error::Schema("empty country id".into()));
        }
        let year = match year_idx {
            Some(i) => field(i)
                .parse::<i32>()
                .map_err(|_| Error::Schema(format!("unparseable year for {country_id}: {:?}", field(i))))?,
            None => 0,
        };
        if !seen.insert((country_id.clone(), year)) {
            return Err(Error::DuplicateRow {
                country: country_id,
                year,
            });
        }
        let text = |idx: Option<usize>| idx.map(|i| field(i).to_string()).filter(|s| !s.is_empty());
        rows.push(RawRow {
            name: text(name_idx),
            income_group: text(income_idx),
            year,
            values: numeric_idx.iter().map(|&i| parse_cell(field(i))).collect(),
            country_id,
        });
    }
    Ok(RawTable {
        schema: schema.clone(),
        columns: numeric.iter().map(|c| c.name.clone()).collect(),
        rows,
    })
}

/// Keep rows complete on `modeled_columns`. Returns the survivors.
pub fn drop_incomplete(table: &RawTable, modeled_columns: &[String]) -> Result<RawTable> {
    let idx = modeled_columns
        .iter()
        .map(|c| {
            table
                .column_index(c)
                .ok_or_else(|| Error::Schema(format!("modeled column {c} is not in the table")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<RawRow> = table
        .rows
        .iter()
        .filter(|r| idx.iter().all(|&j| r.values[j].is_some()))
        .cloned()
        .collect();
    if rows.is_empty() {
        return Err(Error::NoSurvivors);
    }
    info!("complete-case filter: {} of {} rows survive", rows.len(), table.rows.len());
    Ok(RawTable {
        schema: table.schema.clone(),
        columns: table.columns.clone(),
        rows,
    })
}

pub fn reverse_direction(column: &[f64]) -> Vec<f64> {
    column.iter().map(|v| -v).collect()
}

/// Center and scale to sample mean 0 and sample (n−1) sd 1.
pub fn standardize(column: &[f64]) -> Result<Vec<f64>> {
    let n = column.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("standardize needs at least 2 values, got {n}")));
    }
    let mean = column.iter().sum::<f64>() / n as f64;
    let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || sd <= f64::EPSILON * mean.abs() {
        return Err(Error::ConstantColumn(String::new()));
    }
    Ok(column.iter().map(|v| (v - mean) / sd).collect())
}

/// Sample median (mean of the two central order statistics for even n).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `T_i = 1` iff `values_i` is strictly above the sample median.
pub fn dichotomize_treatment(values: &[f64]) -> (Vec<u8>, f64) {
    let m = median(values);
    let t: Vec<u8> = values.iter().map(|&v| u8::from(v > m)).collect();
    let treated = t.iter().filter(|&&v| v == 1).count();
    info!(
        "treatment dichotomized strictly above median {m}: control={}, treated={}",
        t.len() - treated,
        treated
    );
    (t, m)
}

/// Haversine distance in megameters between two (lat, lon) points in degrees.
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) * 0.5).sin();
    let s_lon = ((lon2 - lon1) * 0.5).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_MM * h.sqrt().min(1.0).asin()
}

pub fn great_circle_matrix(coords: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    for &(lat, lon) in coords {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::CoordinateOutOfRange { lat, lon });
        }
    }
    let n = coords.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = haversine(coords[i], coords[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Filter, reverse, dichotomize, and standardize `table` into a dataset.
pub fn build_dataset(table: &RawTable, spec: &TransformSpec) -> Result<Dataset> {
    let schema = &table.schema;
    let metrics = schema.names(ColumnRole::Metric);
    let covariates = schema.names(ColumnRole::Covariate);
    let treatment = match &spec.treatment_column {
        Some(c) => c.clone(),
        None => schema.names(ColumnRole::Treatment).remove(0),
    };
    let lat = schema.names(ColumnRole::CapitalLat).remove(0);
    let lon = schema.names(ColumnRole::CapitalLon).remove(0);
    for r in &spec.reverse_columns {
        if !metrics.contains(r) {
            return Err(Error::Schema(format!("reverse column {r} is not a metric")));
        }
    }

    let years: BTreeSet<i32> = table.rows.iter().map(|r| r.year).collect();
    let year = match spec.year {
        Some(y) => y,
        None if years.len() == 1 => *years.iter().next().expect("non-empty"),
        None if years.is_empty() => return Err(Error::NoSurvivors),
        None => return Err(Error::Config(format!("table spans years {years:?}; select one"))),
    };
    let in_year = RawTable {
        schema: schema.clone(),
        columns: table.columns.clone(),
        rows: table.rows.iter().filter(|r| r.year == year).cloned().collect(),
    };

    let mut modeled: Vec<String> = metrics.iter().chain(&covariates).cloned().collect();
    modeled.extend([treatment.clone(), lat.clone(), lon.clone()]);
    let kept = drop_incomplete(&in_year, &modeled)?;

    let n = kept.rows.len();
    let p = metrics.len();
    if n < p + 2 {
        return Err(Error::TooFewCountries { got: n, need: p + 2 });
    }
    let anchor_index = match &spec.anchor_id {
        Some(id) => kept
            .rows
            .iter()
            .position(|r| &r.country_id == id)
            .ok_or_else(|| Error::AnchorMissing(id.clone()))?,
        None => {
            warn!("no anchor given; defaulting to {}", kept.rows[0].country_id);
            0
        }
    };

    let raw = |name: &str| -> Vec<f64> {
        let j = kept.column_index(name).expect("modeled column present");
        kept.rows.iter().map(|r| r.values[j].expect("complete case")).collect()
    };
    let prepared = |name: &str, reverse: bool| -> Result<Vec<f64>> {
        let v = raw(name);
        let v = if reverse { reverse_direction(&v) } else { v };
        standardize(&v).map_err(|e| match e {
            Error::ConstantColumn(_) => Error::ConstantColumn(name.to_string()),
            other => other,
        })
    };

    let mut y = DMatrix::zeros(n, p);
    for (j, m) in metrics.iter().enumerate() {
        let col = prepared(m, spec.reverse_columns.contains(m))?;
        y.set_column(j, &nalgebra::DVector::from_vec(col));
    }
    let mut x = DMatrix::zeros(n, covariates.len());
    for (j, c) in covariates.iter().enumerate() {
        let col = prepared(c, false)?;
        x.set_column(j, &nalgebra::DVector::from_vec(col));
    }
    let (t, _) = dichotomize_treatment(&raw(&treatment));

    let lats = raw(&lat);
    let lons = raw(&lon);
    let coords: Vec<(f64, f64)> = lats.iter().copied().zip(lons.iter().copied()).collect();
    let d = great_circle_matrix(&coords)?;

    let countries = kept
        .rows
        .iter()
        .zip(&coords)
        .map(|(r, &(la, lo))| Country {
            id: r.country_id.clone(),
            name: r.name.clone().unwrap_or_else(|| r.country_id.clone()),
            income_group: r.income_group.clone().unwrap_or_default(),
            capital_lat_deg: la,
            capital_lon_deg: lo,
        })
        .collect();

    let ds = Dataset {
        countries,
        year,
        y,
        x,
        t,
        d,
        metric_names: metrics,
        covariate_names: covariates,
        anchor_index,
    };
    ds.validate(true)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> Schema {
        let c = |name: &str, role| ColumnDecl {
            name: name.into(),
            role,
        };
        Schema {
            columns: vec![
                c("iso", ColumnRole::Id),
                c("country", ColumnRole::Name),
                c("year", ColumnRole::Year),
                c("income", ColumnRole::IncomeGroup),
                c("gni", ColumnRole::Metric),
                c("life", ColumnRole::Metric),
                c("forest", ColumnRole::Covariate),
                c("mml", ColumnRole::Treatment),
                c("lat", ColumnRole::CapitalLat),
                c("lon", ColumnRole::CapitalLon),
            ],
        }
    }

    const HEADER: &str = "iso,country,year,income,gni,life,forest,mml,lat,lon\n";

    #[test]
    fn empty_cell_is_missing() {
        let csv = format!(
            "{HEADER}AAA,A,2015,High,1,70,3,98,10,10\nBBB,B,2015,Low,,60,2,0,20,20\nCCC,C,2015,Low,3,NA,1,410,30,30\n"
        );
        let t = parse_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.missing_count(), 2);
        assert_eq!(t.column("gni").unwrap()[1], None);
    }

    #[test]
    fn one_missing_gni_cell() {
        let csv = format!(
            "{HEADER}AAA,A,2015,High,1,70,3,98,10,10\nBBB,B,2015,Low,,60,2,0,20,20\nCCC,C,2015,Low,3,65,1,410,30,30\n"
        );
        let t = parse_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(t.missing_count(), 1);
    }

    #[test]
    fn duplicate_country_year_rejected() {
        let csv = format!("{HEADER}AAA,A,2015,High,1,70,3,98,10,10\nAAA,A,2015,High,2,71,3,98,10,10\n");
        assert!(matches!(
            parse_csv(csv.as_bytes(), &schema()),
            Err(Error::DuplicateRow { .. })
        ));
    }

    #[test]
    fn missing_declared_column_rejected() {
        let csv = "iso,country,year,income,gni,forest,mml,lat,lon\nAAA,A,2015,High,1,3,98,10,10\n";
        assert!(matches!(parse_csv(csv.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn drop_incomplete_semantics() {
        let csv = format!(
            "{HEADER}A,A,1,x,1,1,1,1,0,0\nB,B,1,x,,1,1,1,0,0\nC,C,1,x,1,1,1,1,0,0\nD,D,1,x,1,,1,1,0,0\nE,E,1,x,1,1,1,1,0,0\n"
        );
        let t = parse_csv(csv.as_bytes(), &schema()).unwrap();
        let cols = vec!["gni".to_string(), "life".to_string()];
        assert_eq!(drop_incomplete(&t, &cols).unwrap().rows.len(), 3);
        let complete = drop_incomplete(&t, &cols).unwrap();
        assert_eq!(drop_incomplete(&complete, &cols).unwrap(), complete);

        let all_missing = format!("{HEADER}A,A,1,x,,1,1,1,0,0\nB,B,1,x,,1,1,1,0,0\n");
        let t = parse_csv(all_missing.as_bytes(), &schema()).unwrap();
        assert!(matches!(drop_incomplete(&t, &cols), Err(Error::NoSurvivors)));
    }

    #[test]
    fn reverse_examples() {
        assert_eq!(reverse_direction(&[2.0, 4.0, 6.0]), vec![-2.0, -4.0, -6.0]);
        assert_eq!(reverse_direction(&[0.0]), vec![0.0]);
        assert_eq!(reverse_direction(&reverse_direction(&[1.5, -3.0])), vec![1.5, -3.0]);
    }

    #[test]
    fn standardize_examples() {
        let s = standardize(&[1.0, 2.0, 3.0]).unwrap();
        for (a, b) in s.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(standardize(&[10.0, 10.0, 10.0]), Err(Error::ConstantColumn(_))));
        let s = standardize(&[0.0, 2.0]).unwrap();
        assert!((s[0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn dichotomize_examples() {
        assert_eq!(dichotomize_treatment(&[0.0, 98.0, 410.0]).0, vec![0, 0, 1]);
        assert_eq!(dichotomize_treatment(&[5.0, 5.0, 5.0]).0, vec![0, 0, 0]);
        assert_eq!(dichotomize_treatment(&[1.0, 2.0, 3.0, 4.0]).0, vec![0, 0, 1, 1]);
    }

    #[test]
    fn haversine_examples() {
        let d = great_circle_matrix(&[(0.0, 0.0), (0.0, 0.0), (0.0, 90.0), (0.0, 180.0)]).unwrap();
        assert_eq!(d[(0, 1)], 0.0);
        // π·6.371/2 = 10.007543 Mm, π·6.371 = 20.015087 Mm
        assert!((d[(0, 2)] - std::f64::consts::PI * 6.371 / 2.0).abs() < 1e-12);
        assert!((d[(0, 2)] - 10.007543).abs() < 1e-4);
        assert!((d[(0, 3)] - 20.015087).abs() < 1e-4);
        assert!(great_circle_matrix(&[(91.0, 0.0)]).is_err());
        assert!(great_circle_matrix(&[(0.0, -180.5)]).is_err());
    }

    fn country_table_csv(n: usize) -> String {
        let mut s = String::from(HEADER);
        for i in 0..n {
            let f = i as f64;
            s.push_str(&format!(
                "C{i:03},Country {i},2015,{},{},{},{},{},{},{}\n",
                if i % 2 == 0 { "High" } else { "Low" },
                (f * 1.7).sin() * 10.0 + f,
                60.0 + (f * 0.3).cos() * 5.0 + f * 0.1,
                (f * 0.9).sin() + 0.01 * f,
                (i * 37 % 11) as f64 * 40.0,
                -60.0 + (i * 13 % 120) as f64,
                -170.0 + (i * 29 % 340) as f64,
            ));
        }
        s
    }

    #[test]
    fn build_dataset_order_and_invariants() {
        let table = parse_csv(country_table_csv(12).as_bytes(), &schema()).unwrap();
        let spec = TransformSpec {
            reverse_columns: vec!["life".into()],
            anchor_id: Some("C003".into()),
            ..Default::default()
        };
        let ds = build_dataset(&table, &spec).unwrap();
        assert_eq!((ds.n(), ds.p(), ds.k()), (12, 2, 1));
        assert_eq!(ds.metric_names, vec!["gni", "life"]);
        assert_eq!(ds.anchor_index, 3);
        // reversal then standardization: life column is the negated standardized raw column
        let life = table.column("life").unwrap().into_iter().map(Option::unwrap).collect::<Vec<_>>();
        let expected = standardize(&life).unwrap();
        for i in 0..12 {
            assert!((ds.y[(i, 1)] + expected[i]).abs() < 1e-12);
        }
        let again = build_dataset(&table, &spec).unwrap();
        assert_eq!(ds.to_json().unwrap(), again.to_json().unwrap());
    }

    #[test]
    fn anchor_filtered_out_is_error() {
        let mut csv = country_table_csv(8);
        csv.push_str("ZZZ,Z,2015,Low,,1,1,1,0,0\n");
        let table = parse_csv(csv.as_bytes(), &schema()).unwrap();
        let spec = TransformSpec {
            anchor_id: Some("ZZZ".into()),
            ..Default::default()
        };
        assert!(matches!(build_dataset(&table, &spec), Err(Error::AnchorMissing(_))));
    }

    #[test]
    fn too_few_countries() {
        let table = parse_csv(country_table_csv(3).as_bytes(), &schema()).unwrap();
        assert!(matches!(
            build_dataset(&table, &TransformSpec::default()),
            Err(Error::TooFewCountries { got: 3, need: 4 })
        ));
    }

    proptest! {
        #[test]
        fn standardize_idempotent(v in proptest::collection::vec(-1e3f64..1e3, 3..40)) {
            prop_assume!(standardize(&v).is_ok());
            let once = standardize(&v).unwrap();
            let twice = standardize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn dichotomize_monotone_invariant(v in proptest::collection::vec(0f64..500.0, 1..40)) {
            let (t, _) = dichotomize_treatment(&v);
            let transformed: Vec<f64> = v.iter().map(|x| (x + 1.0).ln() * 3.0 + x.powi(3) * 1e-4).collect();
            prop_assert_eq!(t, dichotomize_treatment(&transformed).0);
        }

        #[test]
        fn triangle_inequality(a in (-90f64..90.0, -180f64..180.0), b in (-90f64..90.0, -180f64..180.0), c in (-90f64..90.0, -180f64..180.0)) {
            let d = great_circle_matrix(&[a, b, c]).unwrap();
            prop_assert!(d[(0, 2)] <= d[(0, 1)] + d[(1, 2)] + 1e-9);
            prop_assert!(d[(0, 1)] <= 20.038);
        }
    }
}
