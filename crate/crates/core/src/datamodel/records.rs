use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub id: String,
    pub title: String,
    pub brand: String,
    pub color: String,
    pub age_group: String,
    pub category: String,
    pub price: f64,
    pub rating: f64,
    #[serde(default)]
    pub extra_categorical: BTreeMap<String, String>,
    #[serde(default)]
    pub extra_numeric: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CustomerRecord {
    pub id: String,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
    #[serde(default)]
    pub history: BTreeMap<String, f64>,
}

/// One display of a product to a customer for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub query_id: String,
    pub product_id: String,
    pub customer_id: String,
    pub position: u32,
    pub click: bool,
    pub atc: bool,
    pub trx: bool,
    #[serde(default)]
    pub relevance_class: Option<usize>,
}

impl ImpressionRecord {
    /// Any interaction counts as positive for sampling.
    pub fn is_positive(&self) -> bool {
        self.click || self.atc || self.trx
    }

    /// `trx ⇒ atc ⇒ click`
    pub fn satisfies_hierarchy(&self) -> bool {
        (!self.trx || self.atc) && (!self.atc || self.click)
    }
}

impl QueryRecord {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Data(format!("query `{}` has empty text", self.id)));
        }
        Ok(())
    }
}

impl ProductRecord {
    pub fn validate(&self) -> Result<()> {
        if self.category.is_empty() {
            return Err(Error::Data(format!("product `{}` has no category", self.id)));
        }
        if !(self.price >= 0.0) || !self.price.is_finite() {
            return Err(Error::Data(format!(
                "product `{}` has invalid price {}",
                self.id, self.price
            )));
        }
        if !(0.0..=5.0).contains(&self.rating) {
            return Err(Error::Data(format!(
                "product `{}` has rating {} outside [0, 5]",
                self.id, self.rating
            )));
        }
        Ok(())
    }
}

/// Impressions plus the query/product/customer records they reference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub queries: BTreeMap<String, QueryRecord>,
    pub products: BTreeMap<String, ProductRecord>,
    pub customers: BTreeMap<String, CustomerRecord>,
    pub impressions: Vec<ImpressionRecord>,
}

impl Dataset {
    pub fn query(&self, id: &str) -> Result<&QueryRecord> {
        self.queries
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown query id `{id}`")))
    }

    pub fn product(&self, id: &str) -> Result<&ProductRecord> {
        self.products
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown product id `{id}`")))
    }

    pub fn customer(&self, id: &str) -> Result<&CustomerRecord> {
        self.customers
            .get(id)
            .ok_or_else(|| Error::Data(format!("unknown customer id `{id}`")))
    }

    pub fn len(&self) -> usize {
        self.impressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impressions.is_empty()
    }

    /// Same record stores, different impressions.
    pub fn with_impressions(&self, impressions: Vec<ImpressionRecord>) -> Dataset {
        Dataset {
            queries: self.queries.clone(),
            products: self.products.clone(),
            customers: self.customers.clone(),
            impressions,
        }
    }

    pub fn hierarchy_violations(&self) -> usize {
        self.impressions
            .iter()
            .filter(|i| !i.satisfies_hierarchy())
            .count()
    }
}
