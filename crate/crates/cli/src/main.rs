fn main() {
    let _ = zoomdesc::SketchImage::MIN_SIDE;
}
