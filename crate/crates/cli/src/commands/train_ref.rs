//! `crosscheck train-ref`: train and persist a reference model.

use crosscheck::ngram::{Corpus, NGramModel};

use crate::args::TrainRefArgs;
use crate::{io, CliError, Outcome};

pub fn run(args: TrainRefArgs) -> Result<Outcome, CliError> {
    let entries = std::fs::read_dir(&args.corpus_dir).map_err(|e| {
        CliError::usage(format!("cannot read corpus directory {}: {e}", args.corpus_dir.display()))
    })?;
    // Sorted filename order pins the corpus fingerprint.
    let mut files: Vec<_> = entries
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_file())
        .map(|entry| entry.path())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::usage(format!(
            "corpus directory {} contains no files",
            args.corpus_dir.display()
        )));
    }
    let documents = files
        .iter()
        .map(|path| {
            std::fs::read(path)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let name = args
        .corpus_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.corpus_dir.display().to_string());
    let corpus = Corpus::new(name, documents).map_err(|e| CliError::usage(e.to_string()))?;
    let model = NGramModel::train(&corpus, args.order, args.alpha)
        .map_err(|e| CliError::usage(e.to_string()))?;

    io::write_atomic(&args.output, &model.to_json_bytes())?;
    println!("{}", model.corpus_fingerprint());
    Ok(Outcome::Success)
}
