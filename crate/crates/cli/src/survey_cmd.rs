use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Subcommand;
use serde_json::json;
use sha2::{Digest, Sha256};

use dialcurate_core::model::Dialogue;
use dialcurate_core::postedit::diff_corpora;
use dialcurate_core::survey::{
    aggregate_ratings, build_surveys, edit_intensity_split, export_survey, length_stratum, read_ratings, PoolItem,
    RatedDialogue, RemainderPolicy, SurveyConfig, Version,
};

use crate::commands::{load_corpus, print_json, write_json};

#[derive(Subcommand)]
pub enum SurveyCommand {
    /// Bundle original/post-edited pairs into blind surveys.
    Build {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        evaluators: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave out dialogues that do not fill a whole survey.
        #[arg(long)]
        drop_remainder: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Average the ratings CSV per version and edit intensity.
    Aggregate {
        #[arg(long)]
        ratings: PathBuf,
        /// `key.json` written by `survey build`.
        #[arg(long)]
        key: PathBuf,
    },
}

/// Opaque id so that evaluators cannot tell the version from it.
fn blind_id(version: Version, id: &str) -> String {
    let tag = match version {
        Version::Orig => "orig",
        Version::PostEdited => "p-e",
    };
    let digest = Sha256::digest(format!("{tag}\u{0}{id}").as_bytes());
    format!("d{}", &hex::encode(digest)[..12])
}

pub fn run(cmd: SurveyCommand) -> Result<()> {
    match cmd {
        SurveyCommand::Build { orig, post, size, evaluators, seed, drop_remainder, out_dir } => {
            let originals = load_corpus(&orig)?;
            let postedited = load_corpus(&post)?;
            let records: Vec<_> =
                diff_corpora(&originals, &postedited).into_iter().filter(|r| r.postedited_id.is_some()).collect();
            let intensity = edit_intensity_split(&records);
            let orig_by_id: HashMap<&str, &Dialogue> = originals.iter().map(|d| (d.id.as_str(), d)).collect();
            let post_by_id: HashMap<&str, &Dialogue> =
                postedited.iter().filter(|d| !d.is_deleted()).map(|d| (d.id.as_str(), d)).collect();

            let mut pool = Vec::new();
            let mut key: BTreeMap<String, RatedDialogue> = BTreeMap::new();
            let mut blind: HashMap<String, &Dialogue> = HashMap::new();
            for r in &records {
                let pe_id = r.postedited_id.as_deref().expect("filtered");
                let (o, p) = (orig_by_id[r.original_id.as_str()], post_by_id[pe_id]);
                let (bo, bp) = (blind_id(Version::Orig, &o.id), blind_id(Version::PostEdited, &p.id));
                for (version, d, me, twin) in [(Version::Orig, o, &bo, &bp), (Version::PostEdited, p, &bp, &bo)] {
                    pool.push(PoolItem { id: me.clone(), stratum: length_stratum(d.len()), twin: Some(twin.clone()) });
                    key.insert(
                        me.clone(),
                        RatedDialogue { version, intensity: intensity.get(&r.original_id).copied(), pair: r.original_id.clone() },
                    );
                    blind.insert(me.clone(), d);
                }
            }
            let cfg = SurveyConfig {
                size,
                evaluators,
                seed,
                remainder: if drop_remainder { RemainderPolicy::Drop } else { RemainderPolicy::Reject },
            };
            let plan = build_surveys(&pool, &cfg)?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let lookup: HashMap<&str, &Dialogue> = blind.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            for s in &plan.surveys {
                let export = export_survey(s, &lookup).context("survey refers to an unknown dialogue")?;
                write_json(&out_dir.join(format!("{}.json", s.id)), &export)?;
            }
            write_json(&out_dir.join("plan.json"), &plan)?;
            write_json(&out_dir.join("key.json"), &key)?;
            print_json(&json!({
                "pairs": records.len(),
                "surveys": plan.surveys.len(),
                "dropped": plan.dropped.len(),
            }))
        }
        SurveyCommand::Aggregate { ratings, key } => {
            let file = fs::File::open(&ratings).with_context(|| format!("opening {}", ratings.display()))?;
            let ratings = read_ratings(file)?;
            let key: HashMap<String, RatedDialogue> = serde_json::from_str(
                &fs::read_to_string(&key).with_context(|| format!("reading {}", key.display()))?,
            )?;
            print_json(&aggregate_ratings(&ratings, &key))
        }
    }
}
