for (i = 0; i < N; i++) {
  for (j = 0; j < N; j++) {
    A[i][j] = i + j;
  }
}
// assert(forall i in [0, N), j in [0, N) :: A[i][j] == i + j)
