use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{Action, FeedbackEvent, Market, Side};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackFormat {
    Csv,
    Jsonl,
}

impl FeedbackFormat {
    /// Guess from the file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => FeedbackFormat::Jsonl,
            _ => FeedbackFormat::Csv,
        }
    }
}

impl FromStr for FeedbackFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(FeedbackFormat::Csv),
            "jsonl" => Ok(FeedbackFormat::Jsonl),
            other => Err(format!("unknown feedback format `{other}`")),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRow {
    sender: String,
    receiver: String,
    action: String,
    timestamp: i64,
    #[serde(default)]
    sender_side: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RosterRow {
    user_id: String,
    side: String,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_roster(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut men = Vec::new();
    let mut women = Vec::new();
    for row in reader.deserialize::<RosterRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        match row.side.parse::<Side>() {
            Ok(Side::X) => men.push(row.user_id),
            Ok(Side::Y) => women.push(row.user_id),
            Err(msg) => return Err(parse_err(path, 0, format!("{}: {msg}", row.user_id))),
        }
    }
    Ok((men, women))
}

fn read_rows(path: &Path, format: FeedbackFormat) -> Result<Vec<(u64, RawRow)>> {
    let mut rows = Vec::new();
    match format {
        FeedbackFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
            for row in reader.deserialize::<RawRow>() {
                match row {
                    Ok(r) => {
                        // the csv position of a successful record is not exposed
                        // through `deserialize`, so count from the header.
                        let line = rows.len() as u64 + 2;
                        rows.push((line, r));
                    }
                    Err(e) => {
                        let line = e.position().map_or(rows.len() as u64 + 2, |p| p.line());
                        return Err(parse_err(path, line, e.to_string()));
                    }
                }
            }
        }
        FeedbackFormat::Jsonl => {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let lineno = i as u64 + 1;
                let r: RawRow = serde_json::from_str(&line)
                    .map_err(|e| parse_err(path, lineno, e.to_string()))?;
                rows.push((lineno, r));
            }
        }
    }
    Ok(rows)
}

/// Reads a feedback log. Sides come from `roster` (`user_id,side`) when
/// given, otherwise from a `sender_side` column on every row.
pub fn load_feedback(path: &Path, format: FeedbackFormat, roster: Option<&Path>) -> Result<Market> {
    let rows = read_rows(path, format)?;

    let (men, women, mut lookup) = match roster {
        Some(roster) => {
            let (men, women) = read_roster(roster)?;
            let lookup: HashMap<String, (Side, usize)> = men
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), (Side::X, i)))
                .chain(women.iter().enumerate().map(|(i, id)| (id.clone(), (Side::Y, i))))
                .collect();
            (men, women, Some(lookup))
        }
        None => (Vec::new(), Vec::new(), None),
    };
    let mut men = men;
    let mut women = women;
    let mut inferred: HashMap<String, (Side, usize)> = HashMap::new();

    let mut events = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let action = Action::from_str(&row.action).map_err(|_| Error::UnknownAction {
            path: path.to_path_buf(),
            line,
            token: row.action.clone(),
        })?;
        if row.timestamp < 0 {
            return Err(parse_err(path, line, format!("negative timestamp {}", row.timestamp)));
        }

        let (s_side, s_idx, r_side, r_idx) = match lookup.as_mut() {
            Some(lookup) => {
                let find = |id: &str| {
                    lookup
                        .get(id)
                        .copied()
                        .ok_or_else(|| parse_err(path, line, format!("user `{id}` is not in the roster")))
                };
                let (ss, si) = find(&row.sender)?;
                let (rs, ri) = find(&row.receiver)?;
                (ss, si, rs, ri)
            }
            None => {
                let side_token = row.sender_side.as_deref().ok_or_else(|| {
                    parse_err(path, line, "no roster given and row has no sender_side column")
                })?;
                let ss: Side = side_token.parse().map_err(|m: String| parse_err(path, line, m))?;
                let mut place = |id: &str, side: Side| -> Result<(Side, usize)> {
                    if let Some(&(s, i)) = inferred.get(id) {
                        return Ok((s, i));
                    }
                    let list = if side == Side::X { &mut men } else { &mut women };
                    list.push(id.to_string());
                    inferred.insert(id.to_string(), (side, list.len() - 1));
                    Ok((side, list.len() - 1))
                };
                let (ss, si) = place(&row.sender, ss)?;
                let (rs, ri) = place(&row.receiver, ss.other())?;
                (ss, si, rs, ri)
            }
        };
        if s_side == r_side {
            return Err(Error::SameSide {
                path: path.to_path_buf(),
                line,
                sender: row.sender,
                receiver: row.receiver,
            });
        }
        events.push(FeedbackEvent {
            sender_side: s_side,
            sender: s_idx,
            receiver: r_idx,
            action,
            timestamp: row.timestamp as u64,
        });
    }
    Market::new(men, women, events)
}

/// A market with the roster's users and no feedback.
pub fn load_roster(path: &Path) -> Result<Market> {
    let (men, women) = read_roster(path)?;
    Market::new(men, women, Vec::new())
}

/// [`load_feedback`] with the format picked from the file extension.
pub fn load_market(feedback: &Path, roster: Option<&Path>) -> Result<Market> {
    load_feedback(feedback, FeedbackFormat::from_path(feedback), roster)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

impl Market {
    /// Writes `user_id,side`, men first, in index order.
    pub fn write_roster(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["user_id", "side"])?;
        for id in &self.men {
            w.write_record([id.as_str(), "X"])?;
        }
        for id in &self.women {
            w.write_record([id.as_str(), "Y"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_feedback(&self, path: &Path, format: FeedbackFormat) -> Result<()> {
        let mut out = create(path)?;
        match format {
            FeedbackFormat::Csv => {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["sender", "receiver", "action", "timestamp"])?;
                for ev in &self.feedback {
                    let (s, r) = self.event_ids(ev);
                    w.write_record([s, r, ev.action.as_str(), &ev.timestamp.to_string()])?;
                }
                w.flush()?;
            }
            FeedbackFormat::Jsonl => {
                for ev in &self.feedback {
                    let (s, r) = self.event_ids(ev);
                    let line = serde_json::json!({
                        "sender": s,
                        "receiver": r,
                        "action": ev.action.as_str(),
                        "timestamp": ev.timestamp,
                    });
                    writeln!(out, "{line}")?;
                }
                out.flush()?;
            }
        }
        Ok(())
    }

    fn event_ids(&self, ev: &FeedbackEvent) -> (&str, &str) {
        (
            self.id(ev.sender_side, ev.sender),
            self.id(ev.sender_side.other(), ev.receiver),
        )
    }
}
