//! Corpus BLEU with its n-gram statistics.

use forge::bleu::{bleu_lines, BleuStats, Smoothing};

fn main() -> forge::Result<()> {
    let hyp: Vec<String> = ["the cat sat on the mat", "a dog runs", "hello world again today now"]
        .map(String::from)
        .to_vec();
    let refs: Vec<String> = ["the cat is on the mat", "a dog runs fast", "hello world again today"]
        .map(String::from)
        .to_vec();
    let tok = |lines: &[String]| -> Vec<Vec<String>> {
        lines.iter().map(|l| l.split_whitespace().map(String::from).collect()).collect()
    };
    let stats = BleuStats::collect(&tok(&hyp), &tok(&refs), 4)?;
    for n in 1..=4 {
        println!("p{n} = {}/{}", stats.matches[n - 1], stats.totals[n - 1]);
    }
    println!("brevity penalty {:.4}", stats.brevity_penalty());
    println!("BLEU            {:.4}", bleu_lines(&hyp, &refs, Smoothing::None)?);

    let short = vec!["the the the the the the the".to_string()];
    let r = vec!["the cat is on the mat".to_string()];
    println!("\nclipped fixture: {:.4} unsmoothed, {:.4} add-one-on-zero",
        bleu_lines(&short, &r, Smoothing::None)?,
        bleu_lines(&short, &r, Smoothing::AddOneOnZero)?);
    Ok(())
}
