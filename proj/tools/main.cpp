#include "mwrdcnn/cli_app.hpp"

int main(int argc, char** argv) { return mwrdcnn::run_cli(argc, argv); }
