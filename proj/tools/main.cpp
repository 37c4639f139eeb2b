#include "kinctx/cli.hpp"

int main(int argc, char** argv) { return kinctx::dispatch(argc, argv); }
