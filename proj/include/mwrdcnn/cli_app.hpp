#pragma once

namespace mwrdcnn {

// Full command-line front end (train / denoise / eval / bench / gradcheck).
// Returns the process exit code; never throws.
int run_cli(int argc, const char* const* argv);

}  // namespace mwrdcnn
