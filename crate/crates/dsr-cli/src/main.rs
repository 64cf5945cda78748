fn main() {
    println!("dsr");
}
