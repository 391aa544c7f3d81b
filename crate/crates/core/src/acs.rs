//! Convenience client for American Community Survey 5-year extracts.
//!
//! Downloads block-group race counts and median income for one state and a
//! list of counties, then writes them as an attribute CSV. Rows are sorted
//! by id, so a re-run with the same arguments reproduces the same file.
//!
//! Variables requested (B03002, non-Hispanic unless noted):
//! total `_001E`, White `_003E`, Black `_004E`, Asian `_006E`,
//! Hispanic or Latino `_012E`; plus median household income `B19013_001E`.
//! "Other" is the total minus the four named groups. Land area is not an
//! ACS variable; that column is left empty for upstream sources to fill.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{AttributeRow, AttributeTable, ATTRIBUTE_CSV_HEADER};

const VAR_TOTAL: &str = "B03002_001E";
const VAR_WHITE: &str = "B03002_003E";
const VAR_BLACK: &str = "B03002_004E";
const VAR_ASIAN: &str = "B03002_006E";
const VAR_LATINO: &str = "B03002_012E";
const VAR_MEDINC: &str = "B19013_001E";

/// One extract request: endpoint such as
/// `https://api.census.gov/data/2016/acs/acs5`, a two-digit state FIPS code,
/// and one or more three-digit county codes.
#[derive(Debug, Clone)]
pub struct AcsRequest {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub state: String,
    pub counties: Vec<String>,
}

impl AcsRequest {
    /// The request URL for one county.
    pub fn url_for_county(&self, county: &str) -> String {
        let mut url = format!(
            "{}?get={VAR_TOTAL},{VAR_WHITE},{VAR_BLACK},{VAR_ASIAN},{VAR_LATINO},{VAR_MEDINC}\
             &for=block%20group:*&in=state:{}&in=county:{}",
            self.endpoint.trim_end_matches('/'),
            self.state,
            county
        );
        if let Some(key) = &self.api_key {
            url.push_str("&key=");
            url.push_str(key);
        }
        url
    }
}

/// Fetches all counties and writes the attribute CSV to `out_path`.
/// Nothing is written unless every request succeeds. Returns the row count.
pub fn fetch_acs_extract(request: &AcsRequest, out_path: &Path) -> Result<usize> {
    if request.counties.is_empty() {
        return Err(Error::Config("no counties requested".to_string()));
    }
    let client = reqwest::blocking::Client::builder()
        .build()
        .map_err(|e| Error::Transport(e.to_string()))?;

    let mut rows: BTreeMap<String, AttributeRow> = BTreeMap::new();
    for county in &request.counties {
        let url = request.url_for_county(county);
        let response = client
            .get(&url)
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Transport(format!(
                "GET for county {county} failed with status {status}"
            )));
        }
        let body = response
            .text()
            .map_err(|e| Error::Transport(e.to_string()))?;
        for (id, row) in parse_acs_response(&body)? {
            rows.insert(id, row);
        }
    }

    let table = AttributeTable { rows };
    write_extract(out_path, &table)?;
    Ok(table.rows.len())
}

/// Parses the ACS JSON payload: an array of arrays whose first row is the
/// header. Geography columns (`state`, `county`, `tract`, `block group`)
/// concatenate into the GEOID-style id.
pub fn parse_acs_response(body: &str) -> Result<Vec<(String, AttributeRow)>> {
    let table: Vec<Vec<serde_json::Value>> =
        serde_json::from_str(body).map_err(|e| Error::Parse {
            path: "<acs response>".to_string(),
            detail: e.to_string(),
        })?;
    let mut iter = table.into_iter();
    let header = iter
        .next()
        .ok_or_else(|| Error::ColumnMapping("empty ACS response".to_string()))?;
    let header: Vec<String> = header
        .iter()
        .map(|v| v.as_str().unwrap_or_default().to_string())
        .collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ColumnMapping(format!("missing ACS column {name:?}")))
    };
    let idx_total = col(VAR_TOTAL)?;
    let idx_white = col(VAR_WHITE)?;
    let idx_black = col(VAR_BLACK)?;
    let idx_asian = col(VAR_ASIAN)?;
    let idx_latino = col(VAR_LATINO)?;
    let idx_medinc = col(VAR_MEDINC)?;
    let idx_state = col("state")?;
    let idx_county = col("county")?;
    let idx_tract = col("tract")?;
    let idx_bg = col("block group")?;

    let count = |cell: &serde_json::Value| -> u64 {
        match cell {
            serde_json::Value::String(s) => s.parse::<i64>().unwrap_or(0).max(0) as u64,
            serde_json::Value::Number(n) => n.as_i64().unwrap_or(0).max(0) as u64,
            _ => 0,
        }
    };

    let mut out = Vec::new();
    for row in iter {
        let text = |i: usize| row.get(i).and_then(|v| v.as_str()).unwrap_or("").to_string();
        let id = format!(
            "{}{}{}{}",
            text(idx_state),
            text(idx_county),
            text(idx_tract),
            text(idx_bg)
        );
        let total = count(&row[idx_total]);
        let white = count(&row[idx_white]);
        let black = count(&row[idx_black]);
        let asian = count(&row[idx_asian]);
        let latino = count(&row[idx_latino]);
        let other = total.saturating_sub(white + black + asian + latino);
        // Census sentinel values for suppressed estimates are negative.
        let medinc = match &row[idx_medinc] {
            serde_json::Value::String(s) => s.parse::<f64>().ok().filter(|v| *v >= 0.0),
            serde_json::Value::Number(n) => n.as_f64().filter(|v| *v >= 0.0),
            _ => None,
        };
        out.push((
            id,
            AttributeRow {
                counts: [white, black, asian, latino, other],
                median_income: medinc,
                land_area_m2: None,
            },
        ));
    }
    Ok(out)
}

fn write_extract(path: &Path, table: &AttributeTable) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(ATTRIBUTE_CSV_HEADER)?;
    for (id, row) in &table.rows {
        writer.write_record([
            id.as_str(),
            &row.counts[0].to_string(),
            &row.counts[1].to_string(),
            &row.counts[2].to_string(),
            &row.counts[3].to_string(),
            &row.counts[4].to_string(),
            &row.median_income.map(|v| v.to_string()).unwrap_or_default(),
            &row.land_area_m2.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
