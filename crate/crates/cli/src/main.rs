use draft_core::eval::PeakAllocator;

#[global_allocator]
static ALLOC: PeakAllocator = PeakAllocator;

fn main() {
    std::process::exit(draft_cli::dispatch(std::env::args_os()));
}
