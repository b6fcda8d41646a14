//! Long-format pair data: one row per (buyer, seller) with the outcome,
//! covariates and optional treatment flags.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::Assignment;
use crate::error::{Error, Result};
use crate::moments::CovariateTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LongData {
    pub outcome: DMatrix<f64>,
    pub covariates: CovariateTensor,
    pub assignment: Option<Assignment>,
    /// Buyer ids in row order (lexicographic).
    pub buyer_ids: Vec<String>,
    /// Seller ids in column order (lexicographic).
    pub seller_ids: Vec<String>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: "<csv>".into(), source },
        kind => Error::Invalid(format!("malformed CSV: {kind:?}")),
    }
}

struct Header {
    n_cov: usize,
    has_treatment: bool,
}

fn parse_header(h: &csv::StringRecord) -> Result<Header> {
    let cols: Vec<&str> = h.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "buyer_id" || cols[1] != "seller_id" || cols[2] != "outcome" {
        return Err(Error::Invalid("header must start with buyer_id,seller_id,outcome".into()));
    }
    let mut rest = &cols[3..];
    let has_treatment = rest.len() >= 2 && rest[rest.len() - 2..] == ["treated_buyer", "treated_seller"];
    if has_treatment {
        rest = &rest[..rest.len() - 2];
    }
    for (k, name) in rest.iter().enumerate() {
        if *name != format!("x{}", k + 1) {
            return Err(Error::Invalid(format!("expected covariate column x{}, found {name:?}", k + 1)));
        }
    }
    Ok(Header { n_cov: rest.len(), has_treatment })
}

fn parse_num(s: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Invalid(format!("line {line}: {what} {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("line {line}: {what} = {s}")));
    }
    Ok(v)
}

fn parse_flag(s: &str, what: &str, line: u64) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Invalid(format!("line {line}: {what} must be 0 or 1, got {other:?}"))),
    }
}

fn set_flag(map: &mut HashMap<String, bool>, id: &str, v: bool, side: &'static str) -> Result<()> {
    match map.insert(id.to_string(), v) {
        Some(old) if old != v => Err(Error::InconsistentTreatment { side, id: id.to_string() }),
        _ => Ok(()),
    }
}

/// Parse long-format data from any reader.
pub fn read_long_csv<R: std::io::Read>(reader: R) -> Result<LongData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() {
        return Err(Error::Invalid("empty file".into()));
    }
    let h = parse_header(&header)?;
    let width = 3 + h.n_cov + if h.has_treatment { 2 } else { 0 };

    let mut cells: BTreeMap<(String, String), (f64, Vec<f64>)> = BTreeMap::new();
    let mut buyers = BTreeSet::new();
    let mut sellers = BTreeSet::new();
    let mut wb: HashMap<String, bool> = HashMap::new();
    let mut ws: HashMap<String, bool> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::Invalid(format!("line {line}: expected {width} fields, found {}", rec.len())));
        }
        let b = rec[0].trim().to_string();
        let s = rec[1].trim().to_string();
        if b.is_empty() || s.is_empty() {
            return Err(Error::Invalid(format!("line {line}: empty id")));
        }
        let y = parse_num(&rec[2], "outcome", line)?;
        let x =
            (0..h.n_cov).map(|k| parse_num(&rec[3 + k], &format!("x{}", k + 1), line)).collect::<Result<Vec<_>>>()?;
        if h.has_treatment {
            let tb = parse_flag(&rec[3 + h.n_cov], "treated_buyer", line)?;
            let ts = parse_flag(&rec[4 + h.n_cov], "treated_seller", line)?;
            set_flag(&mut wb, &b, tb, "buyer")?;
            set_flag(&mut ws, &s, ts, "seller")?;
        }
        buyers.insert(b.clone());
        sellers.insert(s.clone());
        if cells.insert((b.clone(), s.clone()), (y, x)).is_some() {
            return Err(Error::Invalid(format!("line {line}: duplicate pair ({b}, {s})")));
        }
    }
    if cells.is_empty() {
        return Err(Error::Invalid("no data rows".into()));
    }
    let buyer_ids: Vec<String> = buyers.into_iter().collect();
    let seller_ids: Vec<String> = sellers.into_iter().collect();
    let (ni, nj) = (buyer_ids.len(), seller_ids.len());
    let mut outcome = DMatrix::zeros(ni, nj);
    let mut layers = vec![DMatrix::zeros(ni, nj); h.n_cov];
    for (r, b) in buyer_ids.iter().enumerate() {
        for (c, s) in seller_ids.iter().enumerate() {
            let Some((y, x)) = cells.get(&(b.clone(), s.clone())) else {
                return Err(Error::MissingPair { buyer: b.clone(), seller: s.clone() });
            };
            outcome[(r, c)] = *y;
            for (k, v) in x.iter().enumerate() {
                layers[k][(r, c)] = *v;
            }
        }
    }
    let covariates = if h.n_cov == 0 { CovariateTensor::none(ni, nj) } else { CovariateTensor::new(layers)? };
    let assignment = h.has_treatment.then(|| {
        Assignment::new(buyer_ids.iter().map(|b| wb[b]).collect(), seller_ids.iter().map(|s| ws[s]).collect())
    });
    Ok(LongData { outcome, covariates, assignment, buyer_ids, seller_ids })
}

pub fn load_long_csv(path: &Path) -> Result<LongData> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    read_long_csv(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io { path: path.display().to_string(), source },
        other => other,
    })
}

/// Render long-format data; rows are buyer-major in id order.
pub fn long_csv_string(data: &LongData) -> Result<String> {
    let (ni, nj) = data.outcome.shape();
    if data.buyer_ids.len() != ni || data.seller_ids.len() != nj {
        return Err(Error::DimensionMismatch("id lists do not match the outcome matrix".into()));
    }
    let d = data.covariates.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["buyer_id".to_string(), "seller_id".into(), "outcome".into()];
    head.extend((1..=d).map(|k| format!("x{k}")));
    if data.assignment.is_some() {
        head.push("treated_buyer".into());
        head.push("treated_seller".into());
    }
    w.write_record(&head).map_err(csv_err)?;
    for r in 0..ni {
        for c in 0..nj {
            let mut row = vec![data.buyer_ids[r].clone(), data.seller_ids[c].clone(), data.outcome[(r, c)].to_string()];
            row.extend((0..d).map(|k| data.covariates.layer(k)[(r, c)].to_string()));
            if let Some(a) = &data.assignment {
                row.push(u8::from(a.w_buyer[r]).to_string());
                row.push(u8::from(a.w_seller[c]).to_string());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_long_csv(path: &Path, data: &LongData) -> Result<()> {
    std::fs::write(path, long_csv_string(data)?).map_err(io_err(path))
}

/// Assignment as `side,index,treated` rows with 1-based indices.
pub fn assignment_csv_string(a: &Assignment) -> String {
    let mut out = String::from("side,index,treated\n");
    for (k, w) in a.w_buyer.iter().enumerate() {
        out.push_str(&format!("buyer,{},{}\n", k + 1, u8::from(*w)));
    }
    for (k, w) in a.w_seller.iter().enumerate() {
        out.push_str(&format!("seller,{},{}\n", k + 1, u8::from(*w)));
    }
    out
}

pub fn parse_assignment_csv(text: &str) -> Result<Assignment> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let head = rdr.headers().map_err(csv_err)?.clone();
    if head.iter().collect::<Vec<_>>() != ["side", "index", "treated"] {
        return Err(Error::Invalid("assignment header must be side,index,treated".into()));
    }
    let mut b = BTreeMap::new();
    let mut s = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let idx: usize =
            rec[1].trim().parse().map_err(|_| Error::Invalid(format!("line {line}: bad index {:?}", &rec[1])))?;
        let t = parse_flag(&rec[2], "treated", line)?;
        let map = match rec[0].trim() {
            "buyer" => &mut b,
            "seller" => &mut s,
            other => return Err(Error::Invalid(format!("line {line}: unknown side {other:?}"))),
        };
        if map.insert(idx, t).is_some() {
            return Err(Error::Invalid(format!("line {line}: duplicate index {idx}")));
        }
    }
    let dense = |m: BTreeMap<usize, bool>, side: &str| -> Result<Vec<bool>> {
        if m.keys().copied().eq(1..=m.len()) {
            Ok(m.into_values().collect())
        } else {
            Err(Error::Invalid(format!("{side} indices must be 1..n without gaps")))
        }
    };
    Ok(Assignment::new(dense(b, "buyer")?, dense(s, "seller")?))
}
