//! Record parsing, text preprocessing and vocabularies.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::discretize::{GridSpec, HourId, RegionId, TimeBins};
use crate::error::{Error, Result};
use crate::unit::{KeywordId, Modality, UnitId, UserId};

pub const CSV_HEADER: [&str; 5] = ["ts", "lat", "lon", "user", "text"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// Guess from a file extension; anything other than `.csv` is JSONL.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Content {
    Text(String),
    Keywords(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub ts: i64,
    pub location: Option<(f64, f64)>,
    pub user: String,
    pub content: Content,
}

impl RawRecord {
    pub fn validate(&self) -> Result<()> {
        if self.ts <= 0 {
            return Err(Error::Validation(format!(
                "timestamp must be positive, got {}",
                self.ts
            )));
        }
        if let Some((lat, lon)) = self.location {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Error::Validation(format!(
                    "coordinates out of range: ({lat}, {lon})"
                )));
            }
        }
        Ok(())
    }

    /// Serialize as one JSONL line in the input format.
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("ts".into(), self.ts.into());
        if let Some((lat, lon)) = self.location {
            obj.insert("lat".into(), lat.into());
            obj.insert("lon".into(), lon.into());
        }
        obj.insert("user".into(), self.user.clone().into());
        match &self.content {
            Content::Text(t) => obj.insert("text".into(), t.clone().into()),
            Content::Keywords(k) => obj.insert("keywords".into(), k.clone().into()),
        };
        serde_json::Value::Object(obj).to_string()
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    ts: serde_json::Number,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    user: serde_json::Value,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    keywords: Option<Vec<String>>,
}

/// Parse one serialized record. `line_no` is only used in error messages.
pub fn parse_record(line: &str, format: InputFormat, line_no: usize) -> Result<RawRecord> {
    let raw = match format {
        InputFormat::Jsonl => parse_json(line, line_no)?,
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .from_reader(line.as_bytes());
            let mut rec = csv::StringRecord::new();
            match rdr.read_record(&mut rec) {
                Ok(true) => parse_csv_fields(&rec, line_no)?,
                Ok(false) => return Err(Error::parse(line_no, "empty line")),
                Err(e) => return Err(Error::parse(line_no, e.to_string())),
            }
        }
    };
    raw.validate()?;
    Ok(raw)
}

fn parse_json(line: &str, line_no: usize) -> Result<RawRecord> {
    let j: JsonRecord =
        serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
    let ts = match j.ts.as_i64() {
        Some(t) => t,
        None => {
            j.ts.as_f64()
                .filter(|t| t.is_finite())
                .map(|t| t.floor() as i64)
                .ok_or_else(|| Error::parse(line_no, "ts is not a number"))?
        }
    };
    let user = match j.user {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        _ => return Err(Error::parse(line_no, "user must be a string or number")),
    };
    let content = match (j.keywords, j.text) {
        (Some(k), _) => Content::Keywords(k),
        (None, Some(t)) => Content::Text(t),
        (None, None) => {
            return Err(Error::parse(
                line_no,
                "record has neither text nor keywords",
            ))
        }
    };
    Ok(RawRecord {
        ts,
        location: pair_location(j.lat, j.lon)?,
        user,
        content,
    })
}

fn pair_location(lat: Option<f64>, lon: Option<f64>) -> Result<Option<(f64, f64)>> {
    match (lat, lon) {
        (Some(lat), Some(lon)) => Ok(Some((lat, lon))),
        (None, None) => Ok(None),
        _ => Err(Error::Validation(
            "lat and lon must be given together".into(),
        )),
    }
}

fn parse_csv_fields(rec: &csv::StringRecord, line_no: usize) -> Result<RawRecord> {
    if rec.len() != CSV_HEADER.len() {
        return Err(Error::parse(
            line_no,
            format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
        ));
    }
    let ts: i64 = rec[0]
        .trim()
        .parse()
        .map_err(|_| Error::parse(line_no, format!("bad ts {:?}", &rec[0])))?;
    let coord = |s: &str, name: &str| -> Result<Option<f64>> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| Error::parse(line_no, format!("bad {name} {s:?}")))
    };
    Ok(RawRecord {
        ts,
        location: pair_location(coord(&rec[1], "lat")?, coord(&rec[2], "lon")?)?,
        user: rec[3].to_string(),
        content: Content::Text(rec[4].to_string()),
    })
}

/// Read every record from `reader`. Errors carry 1-based line numbers.
pub fn read_raw_records<R: BufRead>(reader: R, format: InputFormat) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    match format {
        InputFormat::Jsonl => {
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(parse_record(&line, format, i + 1)?);
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(reader);
            let headers = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
            if headers.iter().map(str::trim).ne(CSV_HEADER) {
                return Err(Error::parse(
                    1,
                    format!("expected header {}", CSV_HEADER.join(",")),
                ));
            }
            for rec in rdr.records() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    Error::parse(line, e.to_string())
                })?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                let raw = parse_csv_fields(&rec, line)?;
                raw.validate()?;
                out.push(raw);
            }
        }
    }
    Ok(out)
}

/// One preprocessed stream item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub arrival_index: u64,
    pub timestamp: i64,
    pub hour: HourId,
    pub region: Option<RegionId>,
    pub coords: Option<(f64, f64)>,
    pub keywords: Vec<KeywordId>,
    pub user: UserId,
}

impl Record {
    pub fn is_geotagged(&self) -> bool {
        self.region.is_some()
    }

    /// Every unit of the record: region (if any), hour, user, then keywords.
    pub fn units(&self) -> impl Iterator<Item = UnitId> + '_ {
        self.region
            .map(UnitId::from)
            .into_iter()
            .chain([UnitId::from(self.hour), UnitId::from(self.user)])
            .chain(self.keywords.iter().map(|&w| UnitId::from(w)))
    }

    pub fn contains(&self, unit: UnitId) -> bool {
        self.units().any(|u| u == unit)
    }
}

fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        include_str!("stopwords.txt")
            .lines()
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

fn is_url(token: &str) -> bool {
    let t = token.to_ascii_lowercase();
    t.starts_with("http://") || t.starts_with("https://") || t.starts_with("www.")
}

fn fold_char(c: char) -> Option<&'static str> {
    Some(match c {
        'à' | 'á' | 'â' | 'ã' | 'ä' | 'å' | 'ā' | 'ă' | 'ą' => "a",
        'æ' => "ae",
        'ç' | 'ć' | 'č' => "c",
        'ď' | 'đ' | 'ð' => "d",
        'è' | 'é' | 'ê' | 'ë' | 'ē' | 'ė' | 'ę' | 'ě' => "e",
        'ì' | 'í' | 'î' | 'ï' | 'ī' | 'į' | 'ı' => "i",
        'ł' | 'ľ' => "l",
        'ñ' | 'ń' | 'ň' => "n",
        'ò' | 'ó' | 'ô' | 'õ' | 'ö' | 'ø' | 'ō' | 'ő' => "o",
        'œ' => "oe",
        'ř' => "r",
        'ś' | 'š' | 'ş' => "s",
        'ß' => "ss",
        'ť' | 'ţ' => "t",
        'ù' | 'ú' | 'û' | 'ü' | 'ū' | 'ů' | 'ű' => "u",
        'ý' | 'ÿ' => "y",
        'ź' | 'ż' | 'ž' => "z",
        'þ' => "th",
        _ => return None,
    })
}

/// Lowercase, ASCII-fold and split into alphanumeric tokens, dropping
/// @-mentions, URLs and stopwords. Hashtags keep their word.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if chunk.starts_with('@') || is_url(chunk) {
            continue;
        }
        let mut cur = String::new();
        for c in chunk.chars().flat_map(char::to_lowercase) {
            if let Some(folded) = fold_char(c) {
                cur.push_str(folded);
            } else if c.is_alphanumeric() {
                cur.push(c);
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out.retain(|t| !is_stopword(t));
    out
}

pub fn tokens_of(content: &Content) -> Vec<String> {
    match content {
        Content::Text(t) => tokenize(t),
        Content::Keywords(ks) => ks.iter().flat_map(|k| tokenize(k)).collect(),
    }
}

/// String ↔ dense id map with a per-entry count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Interner {
    by_name: HashMap<String, u32>,
    names: Vec<String>,
    counts: Vec<u64>,
}

impl Interner {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.by_name.get(name).copied()
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn count_of(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.by_name.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.counts.push(0);
        id
    }

    fn set_count(&mut self, id: u32, count: u64) {
        self.counts[id as usize] = count;
    }

    fn bump(&mut self, id: u32) {
        self.counts[id as usize] += 1;
    }

    fn insert_with(&mut self, id: u32, name: &str, count: u64) -> Result<()> {
        if id as usize != self.names.len() {
            return Err(Error::Config(format!(
                "vocabulary ids must be dense, got {id}"
            )));
        }
        if self.by_name.insert(name.to_string(), id).is_some() {
            return Err(Error::Config(format!(
                "duplicate vocabulary entry {name:?}"
            )));
        }
        self.names.push(name.to_string());
        self.counts.push(count);
        Ok(())
    }
}

/// Keyword and user vocabularies. Regions and hours are implicit (grid cells
/// and time bins).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    pub keywords: Interner,
    pub users: Interner,
    token_counts: HashMap<String, u64>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corpus frequency of a (tokenized) keyword.
    pub fn token_count(&self, token: &str) -> u64 {
        self.token_counts.get(token).copied().unwrap_or(0)
    }

    /// First pass of offline mode: count every token of the corpus.
    pub fn count_corpus<'a>(&mut self, raws: impl IntoIterator<Item = &'a RawRecord>) {
        for raw in raws {
            for t in tokens_of(&raw.content) {
                *self.token_counts.entry(t).or_insert(0) += 1;
            }
        }
    }

    pub fn keyword(&self, name: &str) -> Option<KeywordId> {
        self.keywords.id_of(name).map(KeywordId)
    }

    pub fn user(&self, name: &str) -> Option<UserId> {
        self.users.id_of(name).map(UserId)
    }

    /// Write the sidecar: `modality<TAB>id<TAB>string<TAB>count` per line.
    pub fn write_sidecar<W: Write>(&self, mut w: W) -> Result<()> {
        for (modality, interner) in [
            (Modality::Keyword, &self.keywords),
            (Modality::User, &self.users),
        ] {
            for (id, name) in interner.names.iter().enumerate() {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}",
                    modality,
                    id,
                    escape(name),
                    interner.counts[id]
                )?;
            }
        }
        Ok(())
    }

    pub fn read_sidecar<R: BufRead>(r: R) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::parse(i + 1, "expected 4 tab-separated fields"));
            }
            let id: u32 = fields[1]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad id"))?;
            let count: u64 = fields[3]
                .parse()
                .map_err(|_| Error::parse(i + 1, "bad count"))?;
            let name = unescape(fields[2]);
            let target = match Modality::from_name(fields[0]) {
                Some(Modality::Keyword) => {
                    vocab.token_counts.insert(name.clone(), count);
                    &mut vocab.keywords
                }
                Some(Modality::User) => &mut vocab.users,
                _ => {
                    return Err(Error::parse(
                        i + 1,
                        format!("unknown modality {:?}", fields[0]),
                    ))
                }
            };
            target
                .insert_with(id, &name, count)
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(vocab)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// How keyword frequencies are known when filtering by `min_freq`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyMode {
    /// Counts were filled by [`Vocabulary::count_corpus`] beforehand.
    Offline,
    /// Counts grow as records arrive; a keyword passes once seen `min_freq` times.
    Stream,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    NoKeywords,
    OutOfBounds,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Preprocessed {
    Record(Record),
    Dropped(DropReason),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub input: u64,
    pub emitted: u64,
    pub dropped_no_keywords: u64,
    pub dropped_out_of_bounds: u64,
    pub out_of_order: u64,
}

/// Turns raw records into [`Record`]s, assigning ids and arrival indices.
#[derive(Clone, Debug)]
pub struct Ingestor {
    pub vocab: Vocabulary,
    pub grid: GridSpec,
    pub tz_offset_min: i32,
    pub time_bins: TimeBins,
    pub min_freq: u64,
    pub mode: FrequencyMode,
    pub stats: IngestStats,
    next_arrival: u64,
    last_ts: Option<i64>,
}

impl Ingestor {
    pub fn new(grid: GridSpec, tz_offset_min: i32, min_freq: u64, mode: FrequencyMode) -> Self {
        Ingestor {
            vocab: Vocabulary::new(),
            grid,
            tz_offset_min,
            time_bins: TimeBins::default(),
            min_freq,
            mode,
            stats: IngestStats::default(),
            next_arrival: 0,
            last_ts: None,
        }
    }

    pub fn with_vocabulary(mut self, vocab: Vocabulary) -> Self {
        self.vocab = vocab;
        self
    }

    pub fn with_time_bins(mut self, bins: TimeBins) -> Self {
        self.time_bins = bins;
        self
    }

    pub fn preprocess(&mut self, raw: &RawRecord) -> Preprocessed {
        self.stats.input += 1;
        if let Some(last) = self.last_ts {
            if raw.ts < last {
                self.stats.out_of_order += 1;
                log::warn!(
                    "record at ts {} arrived after ts {}; accepting out of order",
                    raw.ts,
                    last
                );
            }
        }
        self.last_ts = Some(self.last_ts.map_or(raw.ts, |l| l.max(raw.ts)));

        let region = match raw.location {
            Some((lat, lon)) => match self.grid.locate(lat, lon) {
                Ok(r) => Some(r),
                Err(_) => {
                    self.stats.dropped_out_of_bounds += 1;
                    return Preprocessed::Dropped(DropReason::OutOfBounds);
                }
            },
            None => None,
        };

        let tokens = tokens_of(&raw.content);
        if self.mode == FrequencyMode::Stream {
            for t in &tokens {
                *self.vocab.token_counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut keywords: Vec<KeywordId> = Vec::with_capacity(tokens.len());
        for t in &tokens {
            let freq = self.vocab.token_count(t);
            if freq < self.min_freq {
                continue;
            }
            let id = self.vocab.keywords.intern(t);
            self.vocab.keywords.set_count(id, freq);
            let id = KeywordId(id);
            if !keywords.contains(&id) {
                keywords.push(id);
            }
        }
        if keywords.is_empty() {
            self.stats.dropped_no_keywords += 1;
            return Preprocessed::Dropped(DropReason::NoKeywords);
        }

        let user = self.vocab.users.intern(&raw.user);
        self.vocab.users.bump(user);
        let record = Record {
            arrival_index: self.next_arrival,
            timestamp: raw.ts,
            hour: self.time_bins.bin(raw.ts, self.tz_offset_min),
            region,
            coords: region.and(raw.location),
            keywords,
            user: UserId(user),
        };
        self.next_arrival += 1;
        self.stats.emitted += 1;
        Preprocessed::Record(record)
    }

    /// Preprocess a whole corpus. In offline mode this runs the counting pass
    /// first, so `min_freq` applies to corpus-wide frequencies.
    pub fn ingest_all(&mut self, raws: &[RawRecord]) -> Vec<Record> {
        if self.mode == FrequencyMode::Offline {
            self.vocab.count_corpus(raws);
        }
        raws.iter()
            .filter_map(|raw| match self.preprocess(raw) {
                Preprocessed::Record(r) => Some(r),
                Preprocessed::Dropped(_) => None,
            })
            .collect()
    }
}
