//! Corpus BLEU on strings and on symbol sequences.
//!
//! `cargo run --example bleu`

use scs2ut::evalsuite::{bleu, bleu_text, tokenize};

fn main() -> scs2ut::Result<()> {
    for (h, r) in [
        ("the cat sat on a mat", "the cat sat on a mat"),
        ("the cat sat on the mat", "the cat sat on a mat"),
        ("The cat sat.", "the cat sat on a mat"),
    ] {
        let b = bleu_text(&[h], &[r])?;
        println!("{h:?} vs {r:?}: BLEU {:.2}, bp {:.4}, precisions {:?}", b.bleu, b.bp, b.precisions);
    }
    println!("tokens: {:?}", tokenize("Hello, World! It's 5 o'clock."));
    let hyps = vec![vec!["ba", "de", "fi"], vec!["go", "hu"]];
    let refs = vec![vec!["ba", "de", "fi"], vec!["go", "ja"]];
    println!("symbol corpus BLEU {:.2}", bleu(&hyps, &refs, 4)?.bleu);
    Ok(())
}
