use alif_snn::arch::parse_arch;

fn main() -> alif_snn::Result<()> {
    let nets = [
        ("MNIST", "{c128k3s1-BN-ALIF-MPk2s2}*2-DP-FC2048-ALIF-DP-FC100-ALIF-APk10s10", [1, 28, 28]),
        ("CIFAR-10", "{{c256k3s1-BN-ALIF}*3-MPk2s2}*2-DP-FC2048-ALIF-DP-FC100-ALIF-APk10s10", [3, 32, 32]),
    ];
    for (name, text, input) in nets {
        let spec = parse_arch(text)?;
        println!("{name}: {} body layers, rendered as {}", spec.layers.len(), spec.render());
        println!("{}", spec.table(&input)?);
    }
    match parse_arch("c32k3s1-BN-ALIF-MPk2-FC10") {
        Err(e) => println!("malformed string rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
