use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod survey_cmd;

#[derive(Parser)]
#[command(name = "dialcurate", version, about = "Dialogue corpus curation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Template {
    Context,
    Rewrite,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Lang {
    It,
    En,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Markdown,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum GroupBy {
    Source,
}

#[derive(Subcommand)]
enum Command {
    /// Cut two-speaker excerpts out of script files.
    Extract {
        #[arg(long, default_value_t = 3)]
        min_window: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Author dialogues with a chat model, live or from a replay file.
    Generate {
        #[arg(long, value_enum)]
        template: Template,
        #[arg(long, value_enum, default_value = "it")]
        lang: Lang,
        /// Custom template body; must hold the template's placeholder once.
        #[arg(long)]
        template_file: Option<PathBuf>,
        #[arg(long, default_value = "top_p=0.9,temperature=0.8")]
        decoding: String,
        /// Context lines (`context`) or a corpus of excerpts (`rewrite`).
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON map of prompt hash to reply; without it the HTTP endpoint
        /// from DIALCURATE_CHAT_URL is used.
        #[arg(long)]
        replay: Option<PathBuf>,
        #[arg(long)]
        rejections: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value_t = 3)]
        max_attempts: u32,
    },
    /// Align original and post-edited corpora and classify every turn.
    Diff {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Corpus repetition rate.
    Rr {
        file: PathBuf,
        #[arg(long, default_value_t = 1000)]
        window: usize,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value_t = 1)]
        ngram_min: usize,
        #[arg(long, default_value_t = 4)]
        ngram_max: usize,
    },
    /// Cut generated dialogues where they start repeating themselves.
    Derail {
        file: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also keep at most this many turns.
        #[arg(long)]
        max_turns: Option<usize>,
    },
    /// Dialogue, turn and token counts per source.
    Stats {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "source")]
        group_by: GroupBy,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Timing log (JSONL) for productivity rates.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Stratified train/validation/test split.
    Split {
        corpus: PathBuf,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Post-edit records (from `diff`) plus the original corpus: also
        /// draw a size-matched original sample for every split.
        #[arg(long, requires = "originals")]
        records: Option<PathBuf>,
        #[arg(long, requires = "records")]
        originals: Option<PathBuf>,
    },
    /// Conditional turn perplexity and Acc@N.
    Eval {
        corpus: PathBuf,
        /// `uniform`, `bigram:TRAIN.jsonl` or `cmd:COMMAND`.
        #[arg(long, default_value = "uniform")]
        scorer: String,
        #[arg(long, default_value = "1,5,10")]
        acc: String,
        #[arg(long, default_value = "0.2,0.3")]
        truncate: String,
        /// Map unknown gold tokens to this vocabulary entry.
        #[arg(long)]
        unk: Option<String>,
        #[arg(long)]
        micro: bool,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Human-evaluation surveys.
    Survey {
        #[command(subcommand)]
        command: survey_cmd::SurveyCommand,
    },
    /// Run the reviewer service.
    Serve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// One annotator id per line.
        #[arg(long)]
        roster: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        snapshot_every: u64,
    },
    /// Load dialogues into the service's data directory as pending tasks.
    Import {
        #[arg(long)]
        data: PathBuf,
        file: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Extract { min_window, out, files } => commands::extract(min_window, &out, &files),
        Command::Generate {
            template,
            lang,
            template_file,
            decoding,
            contexts,
            out,
            replay,
            rejections,
            concurrency,
            max_attempts,
        } => commands::generate(commands::GenerateArgs {
            template,
            lang,
            template_file,
            decoding,
            contexts,
            out,
            replay,
            rejections,
            concurrency,
            max_attempts,
        }),
        Command::Diff { orig, post, out, report } => commands::diff(&orig, &post, &out, report.as_deref()),
        Command::Rr { file, window, stride, ngram_min, ngram_max } => {
            commands::rr(&file, window, stride, ngram_min, ngram_max)
        }
        Command::Derail { file, threshold, out, max_turns } => commands::derail(&file, threshold, &out, max_turns),
        Command::Stats { files, group_by: GroupBy::Source, format, timing } => {
            commands::stats(&files, format, timing.as_deref())
        }
        Command::Split { corpus, ratios, seed, out_dir, records, originals } => {
            commands::split(&corpus, &ratios, seed, &out_dir, records.as_deref().zip(originals.as_deref()))
        }
        Command::Eval { corpus, scorer, acc, truncate, unk, micro, threads } => {
            commands::eval(&corpus, &scorer, &acc, &truncate, unk, micro, threads)
        }
        Command::Survey { command } => survey_cmd::run(command),
        Command::Serve { data, port, host, roster, snapshot_every } => {
            commands::serve(&data, &host, port, roster.as_deref(), snapshot_every)
        }
        Command::Import { data, file } => commands::import(&data, &file),
    }
}
