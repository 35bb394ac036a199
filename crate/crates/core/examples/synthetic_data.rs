//! Writes a procedural seven-segment digit corpus in the IDX layout the
//! loader expects, then reads it back through the normal dataset path.
//!
//! ```text
//! cargo run --release --example synthetic_data -- [DIR] [TRAIN] [TEST]
//! ```
//!
//! The files land in `DIR/mnist/` (default `data-synthetic/mnist/`) and can
//! be fed to every `saliq` subcommand with `--data-dir DIR`. They are a
//! stand-in for pipeline checks, not a substitute for the real corpora.

use std::path::PathBuf;

use saliq::data::{synthetic, Dataset, Source, Split};

fn main() -> saliq::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data-synthetic".into()));
    let train: usize = args.next().map_or(6000, |s| s.parse().expect("TRAIN must be a count"));
    let test: usize = args.next().map_or(1000, |s| s.parse().expect("TEST must be a count"));

    synthetic::write_corpus(&dir, Source::Mnist, train, test, 0)?;
    for split in [Split::Train, Split::Test] {
        let ds = Dataset::load(&dir, Source::Mnist, split)?;
        println!("{split:?}: {} images, class counts {:?}", ds.len(), ds.class_counts());
    }

    let sample = synthetic::dataset(10, 0, Split::Test);
    for (i, label) in sample.labels.iter().enumerate().take(3) {
        println!("\nlabel {label}");
        let img = sample.image(i);
        for row in img.data().chunks(28) {
            let line: String = row.iter().map(|&v| if v > 0.6 { '#' } else if v > 0.2 { '+' } else { '.' }).collect();
            println!("{line}");
        }
    }
    Ok(())
}
