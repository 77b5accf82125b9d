//! Draw the 701-permutation set for 3x3 puzzles and inspect its distances.

use cc_transfer::permset::{apply, generate, inverse, verify};

fn main() -> cc_transfer::Result<()> {
    let ps = generate(9, 701, 3, 7)?;
    let report = verify(&ps);
    println!("{report}");
    println!(
        "first three: {:?} {:?} {:?}",
        ps.get(0),
        ps.get(1),
        ps.get(2)
    );

    let tiles: Vec<char> = "abcdefghi".chars().collect();
    let shuffled = apply(ps.get(1), &tiles);
    let restored = apply(&inverse(ps.get(1)), &shuffled);
    println!(
        "{} -> {} -> {}",
        tiles.iter().collect::<String>(),
        shuffled.iter().collect::<String>(),
        restored.iter().collect::<String>()
    );
    Ok(())
}
