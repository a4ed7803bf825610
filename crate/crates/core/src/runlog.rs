//! JSON-lines run log. Each event is one object with `stage` and `event`
//! keys followed by the event's own fields.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Default, Clone)]
pub struct RunLog {
    events: Vec<Value>,
}

impl RunLog {
    pub fn new() -> RunLog {
        RunLog::default()
    }

    pub fn record<T: Serialize>(&mut self, stage: &str, event: &str, payload: &T) {
        let mut obj = Map::new();
        obj.insert("stage".into(), Value::from(stage));
        obj.insert("event".into(), Value::from(event));
        match serde_json::to_value(payload).expect("log payloads serialize") {
            Value::Object(fields) => obj.extend(fields),
            Value::Null => {}
            other => {
                obj.insert("value".into(), other);
            }
        }
        self.events.push(Value::Object(obj));
    }

    pub fn note(&mut self, stage: &str, event: &str, message: &str) {
        self.record(stage, event, &serde_json::json!({ "message": message }));
    }

    pub fn events(&self) -> &[Value] {
        &self.events
    }

    pub fn find<'a>(&'a self, event: &'a str) -> impl Iterator<Item = &'a Value> + 'a {
        self.events
            .iter()
            .filter(move |e| e.get("event").and_then(Value::as_str) == Some(event))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattens_payload_fields() {
        let mut log = RunLog::new();
        log.record("join", "dropped", &serde_json::json!({ "rows": 3 }));
        let mut out = Vec::new();
        log.write_jsonl(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "{\"stage\":\"join\",\"event\":\"dropped\",\"rows\":3}\n"
        );
        assert_eq!(log.find("dropped").count(), 1);
    }
}
