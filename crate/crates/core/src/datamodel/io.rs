//! JSONL impression files.
//!
//! One impression per line:
//!
//! ```text
//! {"query": {"id", "text"},
//!  "product": {"id", "title", "brand", "color", "age_group", "category", "price", "rating", ...extra},
//!  "customer": {"id", ...},
//!  "position": 3,
//!  "labels": {"click": 1, "atc": 0, "trx": 0}}
//! ```
//!
//! Extra product/customer fields become features: strings are categorical,
//! numbers continuous. Unknown top-level fields are ignored with one warning.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::records::{CustomerRecord, Dataset, ImpressionRecord, ProductRecord, QueryRecord};
use crate::error::{Error, Result};

const TOP_LEVEL: &[&str] = &["query", "product", "customer", "position", "labels", "relevance_class"];
const PRODUCT_FIELDS: &[&str] = &[
    "id", "title", "brand", "color", "age_group", "category", "price", "rating",
];

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        Error::Data(format!("cannot open {}: {e}", path.display()))
    })?;
    read_jsonl(BufReader::new(file), path)
}

pub fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Dataset> {
    let mut ds = Dataset::default();
    let mut unknown = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| err(format!("malformed JSON: {e}")))?;
        parse_entry(&value, &mut ds, &mut unknown).map_err(err)?;
    }
    if !unknown.is_empty() {
        log::warn!(
            "{}: ignoring unknown fields {:?}",
            path.display(),
            unknown.iter().collect::<Vec<_>>()
        );
    }
    let violations = ds.hierarchy_violations();
    if violations > 0 {
        log::warn!(
            "{}: {violations} impressions violate trx => atc => click",
            path.display()
        );
    }
    Ok(ds)
}

fn parse_entry(v: &Value, ds: &mut Dataset, unknown: &mut BTreeSet<String>) -> std::result::Result<(), String> {
    let obj = v.as_object().ok_or("line is not a JSON object")?;
    for k in obj.keys() {
        if !TOP_LEVEL.contains(&k.as_str()) {
            unknown.insert(k.clone());
        }
    }
    let q = object(obj, "query")?;
    let query = QueryRecord {
        id: id_field(q, "query.id")?,
        text: string(q, "text", "query.text")?,
    };
    query.validate().map_err(|e| e.to_string())?;

    let p = object(obj, "product")?;
    let mut product = ProductRecord {
        id: id_field(p, "product.id")?,
        title: string(p, "title", "product.title")?,
        brand: string(p, "brand", "product.brand")?,
        color: string(p, "color", "product.color")?,
        age_group: string(p, "age_group", "product.age_group")?,
        category: scalar_string(p, "category", "product.category")?,
        price: number(p, "price", "product.price")?,
        rating: number(p, "rating", "product.rating")?,
        extra_categorical: Default::default(),
        extra_numeric: Default::default(),
    };
    for (k, val) in p {
        if PRODUCT_FIELDS.contains(&k.as_str()) {
            continue;
        }
        match val {
            Value::String(s) => {
                product.extra_categorical.insert(k.clone(), s.clone());
            }
            Value::Number(n) => {
                product.extra_numeric.insert(k.clone(), n.as_f64().unwrap_or(0.0));
            }
            _ => {
                unknown.insert(format!("product.{k}"));
            }
        }
    }
    product.validate().map_err(|e| e.to_string())?;

    let c = object(obj, "customer")?;
    let mut customer = CustomerRecord {
        id: id_field(c, "customer.id")?,
        ..Default::default()
    };
    for (k, val) in c {
        if k == "id" {
            continue;
        }
        match val {
            Value::String(s) => {
                customer.demographics.insert(k.clone(), s.clone());
            }
            Value::Number(n) => {
                customer.history.insert(k.clone(), n.as_f64().unwrap_or(0.0));
            }
            _ => {
                unknown.insert(format!("customer.{k}"));
            }
        }
    }

    let position = obj
        .get("position")
        .ok_or("missing required field `position`")?
        .as_u64()
        .filter(|&p| p >= 1 && p <= u32::MAX as u64)
        .ok_or("field `position` must be an integer >= 1")? as u32;
    let labels = object(obj, "labels")?;
    let relevance_class = match obj.get("relevance_class") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or("field `relevance_class` must be a nonnegative integer")? as usize,
        ),
    };
    let imp = ImpressionRecord {
        query_id: query.id.clone(),
        product_id: product.id.clone(),
        customer_id: customer.id.clone(),
        position,
        click: flag(labels, "click")?,
        atc: flag(labels, "atc")?,
        trx: flag(labels, "trx")?,
        relevance_class,
    };
    ds.queries.entry(query.id.clone()).or_insert(query);
    ds.products.entry(product.id.clone()).or_insert(product);
    ds.customers.entry(customer.id.clone()).or_insert(customer);
    ds.impressions.push(imp);
    Ok(())
}

fn object<'a>(obj: &'a Map<String, Value>, key: &str) -> std::result::Result<&'a Map<String, Value>, String> {
    obj.get(key)
        .ok_or_else(|| format!("missing required field `{key}`"))?
        .as_object()
        .ok_or_else(|| format!("field `{key}` must be an object"))
}

fn string(obj: &Map<String, Value>, key: &str, full: &str) -> std::result::Result<String, String> {
    obj.get(key)
        .ok_or_else(|| format!("missing required field `{full}`"))?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format!("field `{full}` must be a string"))
}

/// Accepts strings or integers (ids and category codes are often numeric).
fn scalar_string(obj: &Map<String, Value>, key: &str, full: &str) -> std::result::Result<String, String> {
    match obj.get(key) {
        None => Err(format!("missing required field `{full}`")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("field `{full}` must be a string or number")),
    }
}

fn id_field(obj: &Map<String, Value>, full: &str) -> std::result::Result<String, String> {
    scalar_string(obj, "id", full)
}

fn number(obj: &Map<String, Value>, key: &str, full: &str) -> std::result::Result<f64, String> {
    obj.get(key)
        .ok_or_else(|| format!("missing required field `{full}`"))?
        .as_f64()
        .ok_or_else(|| format!("field `{full}` must be a number"))
}

fn flag(obj: &Map<String, Value>, key: &str) -> std::result::Result<bool, String> {
    match obj.get(key) {
        None => Err(format!("missing required field `labels.{key}`")),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(0) => Ok(false),
            Some(1) => Ok(true),
            _ => Err(format!("field `labels.{key}` must be 0 or 1")),
        },
        Some(_) => Err(format!("field `labels.{key}` must be 0 or 1")),
    }
}

/// Serializes one impression with its referenced records.
pub fn impression_to_json(ds: &Dataset, imp: &ImpressionRecord) -> Result<Value> {
    let q = ds.query(&imp.query_id)?;
    let p = ds.product(&imp.product_id)?;
    let c = ds.customer(&imp.customer_id)?;
    let mut product = Map::new();
    product.insert("id".into(), json!(p.id));
    product.insert("title".into(), json!(p.title));
    product.insert("brand".into(), json!(p.brand));
    product.insert("color".into(), json!(p.color));
    product.insert("age_group".into(), json!(p.age_group));
    product.insert("category".into(), json!(p.category));
    product.insert("price".into(), json!(p.price));
    product.insert("rating".into(), json!(p.rating));
    for (k, v) in &p.extra_categorical {
        product.insert(k.clone(), json!(v));
    }
    for (k, v) in &p.extra_numeric {
        product.insert(k.clone(), json!(v));
    }
    let mut customer = Map::new();
    customer.insert("id".into(), json!(c.id));
    for (k, v) in &c.demographics {
        customer.insert(k.clone(), json!(v));
    }
    for (k, v) in &c.history {
        customer.insert(k.clone(), json!(v));
    }
    let mut line = json!({
        "query": {"id": q.id, "text": q.text},
        "product": product,
        "customer": customer,
        "position": imp.position,
        "labels": {"click": imp.click as u8, "atc": imp.atc as u8, "trx": imp.trx as u8},
    });
    if let Some(class) = imp.relevance_class {
        line["relevance_class"] = json!(class);
    }
    Ok(line)
}

pub fn write_jsonl(ds: &Dataset, mut w: impl Write) -> Result<()> {
    for imp in &ds.impressions {
        serde_json::to_writer(&mut w, &impression_to_json(ds, imp)?)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_jsonl(ds, &mut w)?;
    w.flush()?;
    Ok(())
}
