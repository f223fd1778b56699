use std::io::{Read, Write};

use chrono::NaiveDate;

use super::{Cohort, EncounterRecord, Schema, Surgery};
use crate::error::{Error, Result};
use crate::model::{N_OUTCOMES, OUTCOME_NAMES};

const FIXED: [&str; 7] = ["patient_id", "encounter_id", "admission_date", "age", "esrd", "surgeon_id", "surgeries"];
const DATE_FMT: &str = "%Y-%m-%d";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Surgeries as `code:work_units:date` joined by `;`.
fn encode_surgeries(s: &[Surgery]) -> String {
    s.iter()
        .map(|s| format!("{}:{}:{}", s.procedure_code, s.work_units, s.date.format(DATE_FMT)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes one row per encounter with a header; empty cells are missing.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let s = &cohort.schema;
    let header: Vec<&str> = FIXED
        .iter()
        .copied()
        .chain(s.continuous.iter().map(String::as_str))
        .chain(s.binary.iter().map(String::as_str))
        .chain(s.categorical.iter().map(String::as_str))
        .chain(OUTCOME_NAMES)
        .collect();
    w.write_record(&header)?;
    for r in &cohort.records {
        let mut rec: Vec<String> = vec![
            r.patient_id.to_string(),
            r.encounter_id.to_string(),
            r.admission_date.format(DATE_FMT).to_string(),
            r.age.to_string(),
            flag(r.esrd).into(),
            opt(r.surgeon_id),
            encode_surgeries(&r.surgeries),
        ];
        rec.extend(r.continuous.iter().map(|v| opt(*v)));
        rec.extend(r.binary.iter().map(|&b| flag(b).to_string()));
        rec.extend(r.categorical.iter().map(|v| opt(*v)));
        rec.extend(r.outcomes.iter().map(|&b| flag(b).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<T> {
    field.parse().map_err(|_| Error::Format(format!("line {line}: bad {what} `{field}`")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, what: &str, line: u64) -> Result<Option<T>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, what, line).map(Some)
    }
}

fn parse_flag(field: &str, what: &str, line: u64) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Format(format!("line {line}: {what} must be 0 or 1, got `{field}`"))),
    }
}

fn parse_date(field: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field, DATE_FMT).map_err(|_| Error::Format(format!("line {line}: bad date `{field}`")))
}

fn decode_surgeries(field: &str, line: u64) -> Result<Vec<Surgery>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("line {line}: bad surgery `{item}`")));
            }
            Ok(Surgery {
                procedure_code: parse(parts[0], "procedure code", line)?,
                work_units: parse(parts[1], "work units", line)?,
                date: parse_date(parts[2], line)?,
            })
        })
        .collect()
}

/// Reads a cohort written by [`write_cohort_csv`]; the header must match
/// `schema` exactly.
pub fn read_cohort_csv<R: Read>(site: &str, schema: &Schema, input: R) -> Result<Cohort> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let expected: Vec<String> = FIXED
        .iter()
        .map(|s| s.to_string())
        .chain(schema.continuous.iter().cloned())
        .chain(schema.binary.iter().cloned())
        .chain(schema.categorical.iter().cloned())
        .chain(OUTCOME_NAMES.iter().map(|s| s.to_string()))
        .collect();
    if header != expected {
        return Err(Error::Format(format!("{site}: cohort header does not match the configured schema")));
    }
    let (nc, nb, nk) = (schema.continuous.len(), schema.binary.len(), schema.categorical.len());
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let f = |i: usize| row.get(i).unwrap_or("");
        let mut col = FIXED.len();
        let continuous = (0..nc).map(|j| parse_opt(f(col + j), "continuous value", line)).collect::<Result<_>>()?;
        col += nc;
        let binary = (0..nb).map(|j| parse_flag(f(col + j), "binary flag", line)).collect::<Result<_>>()?;
        col += nb;
        let categorical = (0..nk).map(|j| parse_opt(f(col + j), "category code", line)).collect::<Result<_>>()?;
        col += nk;
        let mut outcomes = [false; N_OUTCOMES];
        for (o, y) in outcomes.iter_mut().enumerate() {
            *y = parse_flag(f(col + o), OUTCOME_NAMES[o], line)?;
        }
        records.push(EncounterRecord {
            patient_id: parse(f(0), "patient id", line)?,
            encounter_id: parse(f(1), "encounter id", line)?,
            admission_date: parse_date(f(2), line)?,
            age: parse(f(3), "age", line)?,
            esrd: parse_flag(f(4), "esrd", line)?,
            surgeon_id: parse_opt(f(5), "surgeon id", line)?,
            surgeries: decode_surgeries(f(6), line)?,
            continuous,
            binary,
            categorical,
            outcomes,
        });
    }
    Ok(Cohort { site: site.to_string(), schema: schema.clone(), records })
}
