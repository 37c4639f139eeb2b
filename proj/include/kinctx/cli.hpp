#pragma once

namespace kinctx {

/// Runs one subcommand: ingest-kb, link, build-pretrain, retrieve,
/// assemble-prompt, calibrate or evaluate. Returns 0 on success, 1 on a
/// domain error (bad input, missing file) and 2 on a usage error.
int dispatch(int argc, char** argv);

}  // namespace kinctx
