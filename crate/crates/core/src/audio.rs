//! Audio clips and trial protocols.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Empty("audio clip".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Ground-truth key of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Key {
    Bonafide,
    Spoof,
}

impl Key {
    pub fn parse(token: &str) -> Option<Self> {
        if token.eq_ignore_ascii_case("bonafide") {
            Some(Key::Bonafide)
        } else if token.eq_ignore_ascii_case("spoof") {
            Some(Key::Spoof)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Key::Bonafide => "bonafide",
            Key::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// System id written for bonafide trials.
pub const BONAFIDE_SYSTEM: &str = "-";

/// One labeled utterance of a countermeasure protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialEntry {
    pub speaker_id: String,
    pub utt_id: String,
    /// Attack or system id ("AA", "SS_1", ...). Bonafide trials carry `-`
    /// or `bonafide`.
    pub system_id: String,
    pub key: Key,
}

impl TrialEntry {
    /// Whether `system_id` names the bonafide class.
    pub fn is_bonafide_system(system_id: &str) -> bool {
        system_id == BONAFIDE_SYSTEM || system_id.eq_ignore_ascii_case("bonafide")
    }

    /// The protocol line for this entry, without a trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.speaker_id);
        s.push(' ');
        s.push_str(&self.utt_id);
        s.push_str(" - ");
        s.push_str(&self.system_id);
        s.push(' ');
        s.push_str(self.key.as_str());
        s
    }
}

pub type Protocol = Vec<TrialEntry>;

/// Challenge condition: replay attacks (PA) or synthetic speech (LA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Pa,
    La,
}

/// PA attack ids, in label order after bonafide.
pub const PA_ATTACKS: [&str; 9] = ["AA", "AB", "AC", "BA", "BB", "BC", "CA", "CB", "CC"];
/// LA system ids, in label order after bonafide.
pub const LA_SYSTEMS: [&str; 6] = ["SS_1", "SS_2", "SS_4", "US_1", "VC_1", "VC_4"];

impl Mode {
    pub fn spoof_ids(self) -> &'static [&'static str] {
        match self {
            Mode::Pa => &PA_ATTACKS,
            Mode::La => &LA_SYSTEMS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pa => "PA",
            Mode::La => "LA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("pa") {
            Some(Mode::Pa)
        } else if s.eq_ignore_ascii_case("la") {
            Some(Mode::La)
        } else {
            None
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses the five-column countermeasure protocol
/// `speaker utt_id - system_id key`. Blank lines are skipped.
pub fn parse_protocol(text: &str) -> Result<Protocol> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::ProtocolFieldCount {
                line,
                found: fields.len(),
            });
        }
        let key = Key::parse(fields[4]).ok_or_else(|| Error::UnknownKey {
            line,
            token: fields[4].to_string(),
        })?;
        let utt_id = fields[1].to_string();
        if !seen.insert(utt_id.clone()) {
            return Err(Error::DuplicateUtterance { line, utt_id });
        }
        out.push(TrialEntry {
            speaker_id: fields[0].to_string(),
            utt_id,
            system_id: fields[3].to_string(),
            key,
        });
    }
    Ok(out)
}

/// Renders a protocol in the format read by [`parse_protocol`].
pub fn format_protocol(entries: &[TrialEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bonafide_and_spoof_lines() {
        let p = parse_protocol("S01 f001 - - bonafide\nS01 f002 - AA spoof\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].key, Key::Bonafide);
        assert_eq!(p[0].system_id, "-");
        assert_eq!(p[1].system_id, "AA");
        assert_eq!(p[1].key, Key::Spoof);
    }

    #[test]
    fn key_is_case_insensitive() {
        let p = parse_protocol("S01 f001 - - BonaFide\n\nS02 f002 - BB SPOOF").unwrap();
        assert_eq!(p[0].key, Key::Bonafide);
        assert_eq!(p[1].key, Key::Spoof);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = parse_protocol("S01 f001 - - bonafide\nS02 f001 - AA spoof\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateUtterance { line: 2, .. }));
    }

    #[test]
    fn rejects_wrong_field_count_and_unknown_key() {
        assert!(matches!(
            parse_protocol("S01 f001 - bonafide").unwrap_err(),
            Error::ProtocolFieldCount { line: 1, found: 4 }
        ));
        assert!(matches!(
            parse_protocol("S01 f001 - - genuine").unwrap_err(),
            Error::UnknownKey { .. }
        ));
    }

    #[test]
    fn format_round_trips() {
        let text = "S01 f001 - - bonafide\nS01 f002 - AA spoof\n";
        assert_eq!(format_protocol(&parse_protocol(text).unwrap()), text);
    }

    #[test]
    fn clip_rejects_bad_input() {
        assert!(AudioClip::new(alloc::vec![0.0], 0).is_err());
        assert!(AudioClip::new(Vec::new(), 16000).is_err());
        assert!(AudioClip::new(alloc::vec![f32::NAN], 16000).is_err());
    }
}
