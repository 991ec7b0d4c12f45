//! Script transcripts to two-speaker excerpts.
//!
//! Scripts use a plain house format: one `SPEAKER: text` line per line of
//! dialogue, scenes separated by a blank line or a `===` line. Any other
//! line (stage directions, headings) is dropped and counted.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{merge_consecutive_turns, Dialogue, Source, Turn};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no dialogue content")]
    NoDialogueContent,
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no dialogue content")]
    EmptyScript { path: PathBuf },
    #[error("min_window must be at least 2, got {0}")]
    BadWindow(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneLine {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub lines: Vec<SceneLine>,
    /// Position of the scene in its script, counting from 0.
    pub index: usize,
}

impl Scene {
    /// Scene built from bare speaker labels, with placeholder text.
    pub fn from_speakers<S: AsRef<str>>(speakers: &[S]) -> Scene {
        Scene {
            lines: speakers
                .iter()
                .enumerate()
                .map(|(i, s)| SceneLine {
                    speaker: s.as_ref().to_string(),
                    text: format!("line {i}"),
                })
                .collect(),
            index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedScript {
    pub scenes: Vec<Scene>,
    pub dropped_lines: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub min_window: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { min_window: 3 }
    }
}

const MAX_SPEAKER_LEN: usize = 40;

fn parse_line(line: &str) -> Option<SceneLine> {
    let (speaker, text) = line.split_once(':')?;
    let speaker = speaker.trim();
    let text = text.trim();
    if speaker.is_empty()
        || text.is_empty()
        || speaker.chars().count() > MAX_SPEAKER_LEN
        || speaker.starts_with(['(', '['])
    {
        return None;
    }
    Some(SceneLine {
        speaker: speaker.to_string(),
        text: text.to_string(),
    })
}

pub fn parse_script(text: &str) -> Result<ParsedScript, ExtractError> {
    let mut scenes = Vec::new();
    let mut current: Vec<SceneLine> = Vec::new();
    let mut dropped = 0;
    let flush = |current: &mut Vec<SceneLine>, scenes: &mut Vec<Scene>| {
        if !current.is_empty() {
            let index = scenes.len();
            scenes.push(Scene { lines: std::mem::take(current), index });
        }
    };
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line == "===" {
            flush(&mut current, &mut scenes);
            continue;
        }
        match parse_line(line) {
            Some(l) => current.push(l),
            None => dropped += 1,
        }
    }
    flush(&mut current, &mut scenes);
    if scenes.is_empty() {
        return Err(ExtractError::NoDialogueContent);
    }
    Ok(ParsedScript { scenes, dropped_lines: dropped })
}

fn distinct<'a>(lines: impl Iterator<Item = &'a SceneLine>) -> usize {
    lines.map(|l| l.speaker.as_str()).collect::<HashSet<_>>().len()
}

/// Half-open line ranges of the excerpts the dynamic sliding window picks.
///
/// Scanning left to right, a window of `min_window` lines holding more than
/// two speakers moves forward one line. Otherwise it grows until the next
/// line would bring in a third speaker; if it then holds exactly two
/// speakers it is saved and scanning restarts right after it.
pub fn sliding_window_spans(scene: &Scene, min_window: usize) -> Vec<(usize, usize)> {
    let lines = &scene.lines;
    let n = lines.len();
    let mut spans = Vec::new();
    let mut begin = 0;
    while begin + min_window <= n {
        let mut end = begin + min_window;
        let mut speakers: Vec<&str> = Vec::with_capacity(3);
        for l in &lines[begin..end] {
            if !speakers.contains(&l.speaker.as_str()) {
                speakers.push(&l.speaker);
            }
        }
        if speakers.len() > 2 {
            begin += 1;
            continue;
        }
        while end < n {
            let s = lines[end].speaker.as_str();
            if !speakers.contains(&s) {
                if speakers.len() == 2 {
                    break;
                }
                speakers.push(s);
            }
            end += 1;
        }
        if speakers.len() == 2 {
            spans.push((begin, end));
            begin = end;
        } else {
            // A single speaker up to the end of the scene.
            break;
        }
    }
    debug_assert!(spans.iter().all(|&(b, e)| distinct(lines[b..e].iter()) == 2));
    spans
}

/// Excerpts of one scene, each merged so that speakers alternate.
pub fn dynamic_sliding_window(scene: &Scene, cfg: &ExtractionConfig, id_prefix: &str) -> Vec<Dialogue> {
    sliding_window_spans(scene, cfg.min_window)
        .into_iter()
        .map(|(b, e)| {
            let turns = scene.lines[b..e]
                .iter()
                .map(|l| Turn::new(l.speaker.clone(), l.text.clone()))
                .collect();
            let mut d = Dialogue::new(format!("{id_prefix}#{}#{b}", scene.index), Source::Human, turns);
            d.provenance.insert("scene".into(), json!(scene.index));
            d.provenance.insert("span".into(), json!([b, e]));
            merge_consecutive_turns(&d)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub files: usize,
    pub scenes_seen: usize,
    pub excerpts_emitted: usize,
    pub lines_dropped: usize,
}

/// Extracts excerpts from every script file, in input order. Dialogue ids
/// are `<file>#<scene>#<span-start>` with the path as given.
pub fn extract_corpus(
    paths: &[PathBuf],
    cfg: &ExtractionConfig,
) -> Result<(Vec<Dialogue>, ExtractionSummary), ExtractError> {
    if cfg.min_window < 2 {
        return Err(ExtractError::BadWindow(cfg.min_window));
    }
    let mut corpus = Vec::new();
    let mut summary = ExtractionSummary::default();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|source| ExtractError::Unreadable {
            path: path.clone(),
            source,
        })?;
        let parsed = match parse_script(&text) {
            Ok(p) => p,
            Err(ExtractError::NoDialogueContent) => {
                return Err(ExtractError::EmptyScript { path: path.clone() })
            }
            Err(e) => return Err(e),
        };
        summary.files += 1;
        summary.scenes_seen += parsed.scenes.len();
        summary.lines_dropped += parsed.dropped_lines;
        let prefix = path.display().to_string();
        let title = script_title(path);
        for scene in &parsed.scenes {
            for mut d in dynamic_sliding_window(scene, cfg, &prefix) {
                d.provenance.insert("script".into(), json!(title));
                summary.excerpts_emitted += 1;
                corpus.push(d);
            }
        }
    }
    Ok((corpus, summary))
}

fn script_title(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_split_on_blank_line() {
        let p = parse_script("A: hi\nB: yo\n\nC: new").unwrap();
        assert_eq!(p.scenes.len(), 2);
        assert_eq!(p.scenes[0].lines.len(), 2);
        assert_eq!(p.scenes[1].lines.len(), 1);
        assert_eq!(p.scenes[1].index, 1);
    }

    #[test]
    fn stage_directions_are_dropped() {
        let p = parse_script("(he exits)\nA: hi\nB: yo\nA: ok").unwrap();
        assert_eq!(p.scenes.len(), 1);
        assert_eq!(p.scenes[0].lines.len(), 3);
        assert_eq!(p.dropped_lines, 1);
    }

    #[test]
    fn separator_line() {
        let p = parse_script("A: hi\n===\nB: yo\n===\n===\n").unwrap();
        assert_eq!(p.scenes.len(), 2);
    }

    #[test]
    fn empty_script() {
        assert!(matches!(parse_script(""), Err(ExtractError::NoDialogueContent)));
        assert!(matches!(parse_script("INT. HOUSE - NIGHT\n"), Err(ExtractError::NoDialogueContent)));
    }

    #[test]
    fn window_examples() {
        let s = Scene::from_speakers(&["A", "B", "A", "B", "C"]);
        assert_eq!(sliding_window_spans(&s, 3), vec![(0, 4)]);
        assert!(sliding_window_spans(&Scene::from_speakers(&["A", "B"]), 3).is_empty());
        assert_eq!(sliding_window_spans(&Scene::from_speakers(&["A", "B", "A"]), 3), vec![(0, 3)]);
    }

    #[test]
    fn window_skips_crowded_starts_and_single_speaker() {
        let s = Scene::from_speakers(&["A", "B", "C", "C", "D", "C", "E"]);
        // [A,B,C] crowded; [B,C,C] stops before D; [D,C,E] crowded.
        assert_eq!(sliding_window_spans(&s, 3), vec![(1, 4)]);
        let mono = Scene::from_speakers(&["A", "A", "A", "A"]);
        assert!(sliding_window_spans(&mono, 3).is_empty());
    }

    #[test]
    fn excerpt_is_merged() {
        let p = parse_script("A: uno\nA: due\nB: tre\nA: quattro\nC: cinque").unwrap();
        let out = dynamic_sliding_window(&p.scenes[0], &ExtractionConfig::default(), "f");
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "f#0#0");
        assert_eq!(out[0].turns.len(), 3);
        assert_eq!(out[0].turns[0].text, "uno due");
        assert_eq!(out[0].source, Source::Human);
    }
}
