//! History CSV: `id,stage,stratum,arm,delay,outcome`.
//!
//! `stratum` holds the stratum label, `delay` a non-negative integer or the
//! literal `NA` for a censored outcome. The outcome column is always filled;
//! visibility is decided by the analysis stage, not by the file.

use std::io::{Read, Write};

use crate::error::{CaraError, Result};
use crate::model::{Arm, Delay, ParticipantRecord};

pub const HEADER: [&str; 6] = ["id", "stage", "stratum", "arm", "delay", "outcome"];

pub fn write_history<W: Write>(out: W, records: &[ParticipantRecord], labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        let delay = match r.delay {
            Delay::Lag(d) => d.to_string(),
            Delay::Censored => "NA".to_string(),
        };
        w.write_record([
            r.id.to_string(),
            r.stage.to_string(),
            labels[r.stratum].clone(),
            r.arm.index().to_string(),
            delay,
            r.outcome.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn history_to_string(records: &[ParticipantRecord], labels: &[String]) -> Result<String> {
    let mut buf = Vec::new();
    write_history(&mut buf, records, labels)?;
    Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
}

/// Parses a history file. Errors carry the 1-based data row number.
pub fn read_history<R: Read>(input: R, labels: &[String]) -> Result<Vec<ParticipantRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(CaraError::Schema {
            row: 0,
            message: format!("header must be exactly {}", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let bad = |message: String| CaraError::Schema { row, message };
        if rec.len() != HEADER.len() {
            return Err(bad(format!("expected 6 fields, found {}", rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| bad(format!("bad id {:?}", &rec[0])))?;
        let stage: usize = rec[1]
            .parse()
            .ok()
            .filter(|&s| s >= 1)
            .ok_or_else(|| bad(format!("bad stage {:?}", &rec[1])))?;
        let stratum = labels
            .iter()
            .position(|l| l == &rec[2])
            .ok_or_else(|| bad(format!("unknown stratum {:?}", &rec[2])))?;
        let arm = rec[3]
            .parse::<i64>()
            .ok()
            .and_then(Arm::from_index)
            .ok_or_else(|| bad(format!("arm must be 0 or 1, found {:?}", &rec[3])))?;
        let delay = if &rec[4] == "NA" {
            Delay::Censored
        } else {
            Delay::Lag(
                rec[4]
                    .parse::<u32>()
                    .map_err(|_| bad(format!("bad delay {:?}", &rec[4])))?,
            )
        };
        let outcome: f64 = rec[5]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("bad outcome {:?}", &rec[5])))?;
        out.push(ParticipantRecord {
            id,
            stage,
            stratum,
            arm,
            delay,
            outcome,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels() -> Vec<String> {
        vec!["F".into(), "M".into()]
    }

    #[test]
    fn reads_censored_and_lags() {
        let text = "id,stage,stratum,arm,delay,outcome\n1,1,F,1,0,2.5\n2,2,M,0,NA,-1\n";
        let recs = read_history(text.as_bytes(), &labels()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].delay, Delay::Lag(0));
        assert_eq!(recs[1].delay, Delay::Censored);
        assert_eq!(recs[1].stratum, 1);
        assert_eq!(recs[1].arm, Arm::Control);
    }

    #[test]
    fn arm_two_is_row_addressed() {
        let text = "id,stage,stratum,arm,delay,outcome\n1,1,F,1,0,2.5\n2,1,F,2,0,1\n";
        match read_history(text.as_bytes(), &labels()) {
            Err(CaraError::Schema { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "id,stage,x,arm,delay,outcome\n";
        assert!(matches!(
            read_history(text.as_bytes(), &labels()),
            Err(CaraError::Schema { row: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(
            rows in prop::collection::vec(
                (0u64..1_000_000, 1usize..10, 0usize..2, any::<bool>(), prop::option::of(0u32..12), -1e6f64..1e6),
                0..40)
        ) {
            let recs: Vec<ParticipantRecord> = rows.into_iter().map(|(id, stage, x, treated, d, y)| ParticipantRecord {
                id, stage, stratum: x,
                arm: if treated { Arm::Treated } else { Arm::Control },
                delay: d.map(Delay::Lag).unwrap_or(Delay::Censored),
                outcome: y,
            }).collect();
            let text = history_to_string(&recs, &labels()).unwrap();
            let back = read_history(text.as_bytes(), &labels()).unwrap();
            prop_assert_eq!(back, recs);
        }
    }
}
