//! Parses a LIBSVM snippet and splits it across clients both ways.

use fedshuffle::data::{parse_libsvm_str, partition, to_libsvm, PartitionKind, PartitionScheme};

const DATA: &str = "\
# label index:value ...
 2.0 1:0.5 3:1.0
-1.0 2:2.0
 0.5 1:1.0 2:-0.5 3:0.25
 3.0 3:4e-1
-2.0 1:-1
 1.0 2:1.5 3:0.5
";

fn main() -> fedshuffle::Result<()> {
    let raw = parse_libsvm_str(DATA)?;
    println!("{} rows, {} features", raw.len(), raw.dim());
    print!("{}", to_libsvm(&raw));

    for kind in [PartitionKind::IID, PartitionKind::SortedByTarget] {
        let problem = partition(&raw, PartitionScheme { kind, clients: 3 }, None, 5)?;
        let targets: Vec<&[f64]> = problem.clients().iter().map(|c| c.targets()).collect();
        println!("{kind:?}: lambda = {:.3}, client targets = {targets:?}", problem.lambda());
    }
    Ok(())
}
