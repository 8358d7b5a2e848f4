//! Placeholder bench harness; filled in once the kernel lands.

fn main() {}
