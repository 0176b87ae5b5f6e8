use alif_snn::data::{data_root, decode_pnm, load, write_image, DatasetKind};

fn main() -> alif_snn::Result<()> {
    let root = data_root();
    let train = load(DatasetKind::Mnist, &root, true)?;
    println!("{}: {} images of shape {:?}", train.name, train.len(), train.image_shape());
    let small = train.subset(100, 7)?;
    let mut counts = [0usize; 10];
    for &l in &small.labels {
        counts[l] += 1;
    }
    println!("stratified 100-image subset, per-class counts {counts:?}");

    let dir = std::env::temp_dir().join("alif_snn_dataset_io");
    std::fs::create_dir_all(&dir).map_err(|e| alif_snn::Error::Io { path: dir.clone(), source: e })?;
    for i in 0..3 {
        let path = dir.join(format!("digit_{i}_label{}.pgm", small.labels[i]));
        write_image(&small.image(i), &path)?;
        let bytes = std::fs::read(&path).map_err(|e| alif_snn::Error::Io { path: path.clone(), source: e })?;
        let (c, h, w, _) = decode_pnm(&bytes)?;
        println!("wrote {} ({c}x{h}x{w})", path.display());
    }
    Ok(())
}
