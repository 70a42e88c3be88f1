//! CSV ingestion and serialization of [`Sample`]s.
//!
//! Required columns: `student_id`, `class_id`, `class_type`, `y1`, `y2`.
//! Optional: `school_id` and prefixed covariates `sv_`, `sw1_`, `sw2_`
//! (student level), `cv_`, `cw1_`, `cw2_` (classroom level) and `z_`
//! (instruments). An empty field marks a missing value.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Classroom, Panel, Sample};

const REQUIRED: [&str; 5] = ["student_id", "class_id", "class_type", "y1", "y2"];
const STUDENT_PREFIXES: [&str; 3] = ["sv_", "sw1_", "sw2_"];
const CLASS_PREFIXES: [&str; 4] = ["cv_", "cw1_", "cw2_", "z_"];

/// Variance-group assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HetBy {
    #[default]
    ClassType,
    None,
    School,
    /// A classroom-level column.
    Column(String),
}

impl std::str::FromStr for HetBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class_type" | "classtype" => Ok(Self::ClassType),
            "none" => Ok(Self::None),
            "school" | "school_id" => Ok(Self::School),
            other if CLASS_PREFIXES.iter().any(|p| other.starts_with(p)) => Ok(Self::Column(other.into())),
            other => Err(Error::Config(format!(
                "unknown --het-by `{other}` (class_type, none, school or a classroom column)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub delimiter: u8,
    pub het_by: HetBy,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            het_by: HetBy::ClassType,
        }
    }
}

/// Row-level summary of an ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub classrooms: usize,
    /// Students with an empty `y1` or `y2`; they are dropped from the
    /// estimation rows but still count toward their class size.
    pub missing_outcome: Vec<String>,
    pub missing_covariate_cells: usize,
}

fn parse_number(field: &str, line: usize, column: &str) -> Result<f64> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(f64::NAN);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Input {
            line,
            message: format!("column `{column}`: `{t}` is not a finite number"),
        }),
    }
}

struct Row {
    line: usize,
    student: String,
    class: String,
    school: Option<String>,
    class_type: String,
    y1: f64,
    y2: f64,
    student_vals: Vec<f64>,
    class_vals: Vec<f64>,
}

/// Read a sample from a CSV file.
pub fn ingest_path(path: &Path, opts: &IngestOptions) -> Result<(Sample, IngestReport)> {
    let f = std::fs::File::open(path)?;
    ingest(f, opts)
}

/// Read a sample from CSV text. Classrooms are ordered by
/// `(school_id, class_id)`; students keep their file order within a class.
pub fn ingest<R: Read>(reader: R, opts: &IngestOptions) -> Result<(Sample, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut idx: HashMap<&str, usize> = HashMap::new();
    let mut student_cols: Vec<(usize, String)> = Vec::new();
    let mut class_cols: Vec<(usize, String)> = Vec::new();
    for (k, name) in header.iter().enumerate() {
        if idx.insert(name.as_str(), k).is_some() {
            return Err(Error::Input {
                line: 1,
                message: format!("duplicate column `{name}`"),
            });
        }
        if REQUIRED.contains(&name.as_str()) || name == "school_id" {
            continue;
        }
        if STUDENT_PREFIXES.iter().any(|p| name.starts_with(p) && name.len() > p.len()) {
            student_cols.push((k, name.clone()));
        } else if CLASS_PREFIXES.iter().any(|p| name.starts_with(p) && name.len() > p.len()) {
            class_cols.push((k, name.clone()));
        } else {
            return Err(Error::Input {
                line: 1,
                message: format!(
                    "unknown column `{name}` (expected a required column, school_id, or a prefix among sv_, sw1_, sw2_, cv_, cw1_, cw2_, z_)"
                ),
            });
        }
    }
    for r in REQUIRED {
        if !idx.contains_key(r) {
            return Err(Error::Input {
                line: 1,
                message: format!("missing required column `{r}`"),
            });
        }
    }
    let col = |name: &str| idx[name];
    let school_col = idx.get("school_id").copied();

    let mut rows: Vec<Row> = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Input {
            line,
            message: e.to_string(),
        })?;
        let get = |c: usize| rec.get(c).unwrap_or("").to_string();
        let student = get(col("student_id"));
        if student.is_empty() {
            return Err(Error::Input {
                line,
                message: "empty student_id".into(),
            });
        }
        if let Some(prev) = seen_ids.insert(student.clone(), line) {
            return Err(Error::Input {
                line,
                message: format!("duplicate student_id `{student}` (first seen on line {prev})"),
            });
        }
        let class = get(col("class_id"));
        if class.is_empty() {
            return Err(Error::Input {
                line,
                message: "empty class_id".into(),
            });
        }
        let class_type = get(col("class_type"));
        if class_type.is_empty() {
            return Err(Error::Input {
                line,
                message: "empty class_type".into(),
            });
        }
        let school = school_col.map(get).filter(|s| !s.is_empty());
        rows.push(Row {
            line,
            student,
            class,
            school,
            class_type,
            y1: parse_number(&get(col("y1")), line, "y1")?,
            y2: parse_number(&get(col("y2")), line, "y2")?,
            student_vals: student_cols
                .iter()
                .map(|(c, n)| parse_number(&get(*c), line, n))
                .collect::<Result<_>>()?,
            class_vals: class_cols
                .iter()
                .map(|(c, n)| parse_number(&get(*c), line, n))
                .collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Input {
            line: 2,
            message: "no data rows".into(),
        });
    }

    // Group rows by class_id; school and type must agree within a class.
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_class.entry(r.class.clone()).or_default().push(i);
    }
    let mut order: Vec<(Option<String>, String)> = Vec::with_capacity(by_class.len());
    for (class, members) in &by_class {
        let first = &rows[members[0]];
        for &i in &members[1..] {
            let r = &rows[i];
            if r.school != first.school {
                return Err(Error::Input {
                    line: r.line,
                    message: format!("class `{class}` has inconsistent school_id (line {} differs)", first.line),
                });
            }
            if r.class_type != first.class_type {
                return Err(Error::Input {
                    line: r.line,
                    message: format!("class `{class}` has inconsistent class_type (line {} differs)", first.line),
                });
            }
        }
        if members.len() < 2 {
            return Err(Error::Input {
                line: first.line,
                message: format!("class `{class}` has a single student; classrooms need at least 2"),
            });
        }
        order.push((first.school.clone(), class.clone()));
    }
    order.sort();

    let mut type_labels: Vec<String> = rows.iter().map(|r| r.class_type.clone()).collect();
    type_labels.sort();
    type_labels.dedup();

    let mut classrooms = Vec::with_capacity(order.len());
    let mut student_ids = Vec::new();
    let mut y1 = Vec::new();
    let mut y2 = Vec::new();
    let mut sdata: Vec<Vec<f64>> = vec![Vec::new(); student_cols.len()];
    let mut cdata: Vec<Vec<f64>> = vec![Vec::new(); class_cols.len()];
    let mut missing_outcome = Vec::new();
    let mut missing_cells = 0;
    for (school, class) in &order {
        let members = &by_class[class];
        let first = &rows[members[0]];
        for (k, (_, name)) in class_cols.iter().enumerate() {
            let mut value = f64::NAN;
            let mut from = 0;
            for &i in members {
                let v = rows[i].class_vals[k];
                if v.is_nan() {
                    continue;
                }
                if value.is_nan() {
                    value = v;
                    from = rows[i].line;
                } else if v != value {
                    return Err(Error::Input {
                        line: rows[i].line,
                        message: format!(
                            "classroom column `{name}` varies within class `{class}` ({value} on line {from}, {v} here)"
                        ),
                    });
                }
            }
            cdata[k].push(value);
        }
        for &i in members {
            let r = &rows[i];
            student_ids.push(r.student.clone());
            y1.push(r.y1);
            y2.push(r.y2);
            if r.y1.is_nan() || r.y2.is_nan() {
                missing_outcome.push(r.student.clone());
            }
            for (k, v) in r.student_vals.iter().enumerate() {
                missing_cells += usize::from(v.is_nan());
                sdata[k].push(*v);
            }
        }
        let t = type_labels.binary_search(&first.class_type).unwrap();
        classrooms.push(Classroom {
            id: class.clone(),
            school: school.clone(),
            class_type: t,
            group: t,
            size: members.len(),
        });
    }

    let split = |cols: &[(usize, String)], data: Vec<Vec<f64>>, prefix: &str| -> Panel {
        let mut names = Vec::new();
        let mut out = Vec::new();
        for ((_, n), d) in cols.iter().zip(data) {
            if n.starts_with(prefix) {
                names.push(n.clone());
                out.push(d);
            }
        }
        Panel { names, data: out }
    };
    let sample = Sample {
        classrooms,
        type_labels: type_labels.clone(),
        group_labels: type_labels,
        student_ids,
        y1,
        y2,
        sv: split(&student_cols, sdata.clone(), "sv_"),
        sw1: split(&student_cols, sdata.clone(), "sw1_"),
        sw2: split(&student_cols, sdata, "sw2_"),
        cv: split(&class_cols, cdata.clone(), "cv_"),
        cw1: split(&class_cols, cdata.clone(), "cw1_"),
        cw2: split(&class_cols, cdata.clone(), "cw2_"),
        z: split(&class_cols, cdata, "z_"),
    };
    let sample = assign_groups(sample, &opts.het_by)?;
    sample.validate()?;
    let report = IngestReport {
        rows: rows.len(),
        classrooms: sample.classrooms.len(),
        missing_outcome,
        missing_covariate_cells: missing_cells,
    };
    Ok((sample, report))
}

/// Apply a variance-group rule.
pub fn assign_groups(sample: Sample, het_by: &HetBy) -> Result<Sample> {
    match het_by {
        HetBy::ClassType => {
            let mut s = sample;
            for c in &mut s.classrooms {
                c.group = c.class_type;
            }
            s.group_labels = s.type_labels.clone();
            Ok(s)
        }
        HetBy::None => Ok(sample.single_group()),
        HetBy::School => {
            let labels = sample
                .classrooms
                .iter()
                .map(|c| {
                    c.school
                        .clone()
                        .ok_or_else(|| Error::Config(format!("classroom {} has no school_id", c.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            sample.with_groups(&labels)
        }
        HetBy::Column(name) => {
            let panel = [&sample.cv, &sample.cw1, &sample.cw2, &sample.z]
                .into_iter()
                .find(|p| p.names.contains(name))
                .ok_or_else(|| Error::Config(format!("--het-by column `{name}` not found")))?;
            let k = panel.names.iter().position(|n| n == name).unwrap();
            let labels = panel.data[k]
                .iter()
                .zip(&sample.classrooms)
                .map(|(v, c)| {
                    if v.is_nan() {
                        Err(Error::Config(format!("classroom {} has no value for `{name}`", c.id)))
                    } else {
                        Ok(format!("{name}={v}"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            sample.with_groups(&labels)
        }
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Write a sample in the ingest schema. Values round-trip exactly.
pub fn write_csv<W: Write>(sample: &Sample, writer: W) -> Result<()> {
    sample.validate()?;
    let mut w = csv::Writer::from_writer(writer);
    let student_panels = [&sample.sv, &sample.sw1, &sample.sw2];
    let class_panels = [&sample.cv, &sample.cw1, &sample.cw2, &sample.z];
    let mut header: Vec<String> = ["student_id", "class_id", "school_id", "class_type", "y1", "y2"]
        .map(String::from)
        .to_vec();
    for p in student_panels.iter().chain(&class_panels) {
        header.extend(p.names.iter().cloned());
    }
    w.write_record(&header)?;
    let offs = sample.offsets();
    for (c, cls) in sample.classrooms.iter().enumerate() {
        for i in offs[c]..offs[c + 1] {
            let mut rec = vec![
                sample.student_ids[i].clone(),
                cls.id.clone(),
                cls.school.clone().unwrap_or_default(),
                sample.type_labels[cls.class_type].clone(),
                fmt(sample.y1[i]),
                fmt(sample.y2[i]),
            ];
            for p in &student_panels {
                rec.extend(p.data.iter().map(|d| fmt(d[i])));
            }
            for p in &class_panels {
                rec.extend(p.data.iter().map(|d| fmt(d[c])));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIX: &str = "\
student_id,class_id,school_id,class_type,y1,y2,sv_x,cv_k
1,a,s1,small,10,9,1,5
2,a,s1,small,12,11,2,5
3,a,s1,small,,10,3,5
4,b,s2,regular,15,14,0,7
5,b,s2,regular,16,13,1,7
6,b,s2,regular,17,15,0,7
";

    #[test]
    fn reads_two_classrooms() {
        let (s, rep) = ingest(SIX.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(s.classrooms.len(), 2);
        assert_eq!(s.n(), 6);
        assert_eq!(s.type_labels, vec!["regular", "small"]);
        assert_eq!(s.classrooms[0].class_type, 1);
        assert_eq!(s.cv.data[0], vec![5.0, 7.0]);
        assert!(s.y1[2].is_nan());
        assert_eq!(rep.missing_outcome, vec!["3"]);
    }

    #[test]
    fn round_trip_is_idempotent() {
        let (s, _) = ingest(SIX.as_bytes(), &IngestOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let (t, _) = ingest(buf.as_slice(), &IngestOptions::default()).unwrap();
        let mut buf2 = Vec::new();
        write_csv(&t, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
        assert_eq!(format!("{s:?}"), format!("{t:?}"));
    }

    fn err_line(text: &str) -> usize {
        match ingest(text.as_bytes(), &IngestOptions::default()) {
            Err(Error::Input { line, .. }) => line,
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn rejections_carry_line_numbers() {
        let single = "student_id,class_id,class_type,y1,y2\n1,a,t,1,2\n2,a,t,1,2\n3,b,t,1,2\n";
        assert_eq!(err_line(single), 4);
        let dup = "student_id,class_id,class_type,y1,y2\n1,a,t,1,2\n1,a,t,1,2\n";
        assert_eq!(err_line(dup), 3);
        let bad = "student_id,class_id,class_type,y1,y2\n1,a,t,1,x\n2,a,t,1,2\n";
        assert_eq!(err_line(bad), 2);
        let nan = "student_id,class_id,class_type,y1,y2\n1,a,t,1,2\n2,a,t,NaN,2\n";
        assert_eq!(err_line(nan), 3);
        let unknown = "student_id,class_id,class_type,y1,y2,foo\n1,a,t,1,2,3\n2,a,t,1,2,3\n";
        assert_eq!(err_line(unknown), 1);
        let varying = "student_id,class_id,class_type,y1,y2,cv_k\n1,a,t,1,2,3\n2,a,t,1,2,4\n";
        assert_eq!(err_line(varying), 3);
        let no_type = "student_id,class_id,class_type,y1,y2\n1,a,,1,2\n2,a,t,1,2\n";
        assert_eq!(err_line(no_type), 2);
    }

    #[test]
    fn het_by_rules() {
        let opts = IngestOptions {
            het_by: HetBy::None,
            ..Default::default()
        };
        let (s, _) = ingest(SIX.as_bytes(), &opts).unwrap();
        assert_eq!(s.group_labels.len(), 1);
        let opts = IngestOptions {
            het_by: "cv_k".parse().unwrap(),
            ..Default::default()
        };
        let (s, _) = ingest(SIX.as_bytes(), &opts).unwrap();
        assert_eq!(s.group_labels, vec!["cv_k=5", "cv_k=7"]);
    }
}
