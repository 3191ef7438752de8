//! Soft-label file and summary-report serialization.
//!
//! A soft-label file has one row per image: `image_id`, `support_count`, and
//! `K` probability columns written with 18 significant digits so values
//! round-trip bit-exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::judgments::SummaryStats;
use crate::label::LabelDistribution;
use crate::scalar::Scalar;

pub fn write_soft_label_file<S: Scalar, W: Write>(
    mut writer: W,
    distributions: &BTreeMap<String, LabelDistribution<S>>,
) -> Result<()> {
    let Some(first) = distributions.values().next() else {
        return Err(Error::data("no distributions to write"));
    };
    let k = first.k();
    write!(writer, "image_id,support_count")?;
    for c in 0..k {
        write!(writer, ",p{c}")?;
    }
    writeln!(writer)?;
    for (image_id, dist) in distributions {
        if dist.k() != k {
            return Err(Error::data(format!(
                "distribution for {image_id} has {} classes, expected {k}",
                dist.k()
            )));
        }
        write!(writer, "{image_id},{}", dist.support_count())?;
        for &p in dist.probs() {
            write!(writer, ",{:.17e}", p)?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

pub fn read_soft_label_file<S: Scalar, R: Read>(
    reader: R,
) -> Result<BTreeMap<String, LabelDistribution<S>>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data("empty soft-label file"))?
        .map_err(Error::Io)?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 3 || columns[0] != "image_id" || columns[1] != "support_count" {
        return Err(Error::data(format!("unrecognized soft-label header: {header}")));
    }
    for (i, col) in columns[2..].iter().enumerate() {
        if *col != format!("p{i}") {
            return Err(Error::data(format!("unexpected probability column '{col}'")));
        }
    }
    let k = columns.len() - 2;

    let mut out = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(Error::Io)?;
        let lineno = idx as u64 + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 2 {
            return Err(Error::parse(
                lineno,
                format!("expected {} fields, found {}", k + 2, fields.len()),
            ));
        }
        let image_id = fields[0].to_string();
        let support: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad support_count '{}'", fields[1])))?;
        let mut probs = Vec::with_capacity(k);
        for raw in &fields[2..] {
            let p: f64 = raw
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad probability '{raw}'")))?;
            probs.push(S::cast(p));
        }
        let dist = LabelDistribution::new(probs, support)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        if out.insert(image_id.clone(), dist).is_some() {
            return Err(Error::parse(lineno, format!("duplicate image_id '{image_id}'")));
        }
    }
    if out.is_empty() {
        return Err(Error::data("soft-label file has no rows"));
    }
    Ok(out)
}

/// Key:value text rendering of a judgment-file summary.
pub fn write_summary<W: Write>(mut writer: W, summary: &SummaryStats) -> Result<()> {
    writeln!(writer, "total_judgments: {}", summary.total_judgments)?;
    writeln!(writer, "attention_checks: {}", summary.attention_checks)?;
    writeln!(writer, "images: {}", summary.n_images)?;
    writeln!(writer, "annotators: {}", summary.n_annotators)?;
    writeln!(writer, "judgments_per_image_min: {}", summary.judgments_per_image_min)?;
    writeln!(writer, "judgments_per_image_mean: {}", summary.judgments_per_image_mean)?;
    writeln!(writer, "judgments_per_image_max: {}", summary.judgments_per_image_max)?;
    writeln!(writer, "rejected_annotators: {}", summary.rejected_annotators)?;
    writeln!(writer, "accept_threshold: {}", summary.accept_threshold)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> BTreeMap<String, LabelDistribution<f64>> {
        let mut m = BTreeMap::new();
        m.insert(
            "img_a".to_string(),
            LabelDistribution::from_counts(&[30, 21, 0], 0.0).unwrap(),
        );
        m.insert(
            "img_b".to_string(),
            LabelDistribution::from_counts(&[1, 1, 1], 0.5).unwrap(),
        );
        m
    }

    #[test]
    fn soft_label_file_round_trips_bit_exactly() {
        let original = sample();
        let mut buf = Vec::new();
        write_soft_label_file(&mut buf, &original).unwrap();
        let reread = read_soft_label_file::<f64, _>(buf.as_slice()).unwrap();
        assert_eq!(reread, original);

        // Re-serializing the re-read map reproduces the bytes.
        let mut buf2 = Vec::new();
        write_soft_label_file(&mut buf2, &reread).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn reader_rejects_bad_headers_and_rows() {
        assert!(read_soft_label_file::<f64, _>("foo,bar\n".as_bytes()).is_err());
        let missing_field = "image_id,support_count,p0,p1\nimg,3,0.5\n";
        assert!(read_soft_label_file::<f64, _>(missing_field.as_bytes()).is_err());
        let bad_sum = "image_id,support_count,p0,p1\nimg,3,0.5,0.2\n";
        assert!(read_soft_label_file::<f64, _>(bad_sum.as_bytes()).is_err());
    }

    #[test]
    fn summary_renders_key_value_lines() {
        let summary = SummaryStats {
            total_judgments: 4,
            attention_checks: 1,
            n_images: 3,
            n_annotators: 2,
            judgments_per_image_min: 1,
            judgments_per_image_mean: 4.0 / 3.0,
            judgments_per_image_max: 2,
            rejected_annotators: 0,
            accept_threshold: 0.75,
        };
        let mut buf = Vec::new();
        write_summary(&mut buf, &summary).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("total_judgments: 4"));
        assert!(text.contains("accept_threshold: 0.75"));
    }
}
