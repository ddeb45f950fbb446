fn main() {
    println!("facecycle CLI placeholder");
}
